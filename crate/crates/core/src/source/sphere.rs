//! Single-shell spherical head model and the built-in source geometry.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};

use super::leadfield::LeadField;
use crate::error::{Error, Result};

/// Brain/scalp conductivity of the homogeneous sphere, S/m.
pub const CONDUCTIVITY: f64 = 0.33;
/// Default head radius in metres.
pub const HEAD_RADIUS: f64 = 0.09;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// A fixed-orientation current dipole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    pub position: Vector3<f64>,
    /// Unit vector.
    pub orientation: Vector3<f64>,
}

/// Potential in µV at `sensor` (on the sphere surface) from a 1 nA·m dipole
/// inside a homogeneous sphere.
///
/// Closed form for the surface potential of a dipole in a single-shell
/// conductor, with `d = r - r_q`:
/// `V = [2 d/|d|³ + (r|d| + |r| d) / (|r||d| (|r||d| + r·d))]·q / (4πσ)`.
pub fn dipole_potential(sensor: &Vector3<f64>, dipole: &Dipole, conductivity: f64) -> f64 {
    let r = sensor;
    let d = r - dipole.position;
    let rn = r.norm();
    let dn = d.norm();
    let term1 = d * (2.0 / dn.powi(3));
    let denom = rn * dn * (rn * dn + r.dot(&d));
    let term2 = (r * dn + d * rn) / denom;
    // 1 nA·m in volts → µV: 1e-9 · 1e6.
    (term1 + term2).dot(&dipole.orientation) * 1e-3 / (4.0 * PI * conductivity)
}

/// Lead field of `dipoles` seen by electrodes at `R · sensor_dirs`.
pub fn spherical_lead_field(
    sensor_dirs: &[Vector3<f64>],
    dipoles: &[Dipole],
    head_radius: f64,
) -> Result<LeadField> {
    if !(head_radius.is_finite() && head_radius > 0.0) {
        return Err(Error::invalid(format!("head radius must be > 0, got {head_radius}")));
    }
    for (k, d) in dipoles.iter().enumerate() {
        if !(d.position.norm() < head_radius) {
            return Err(Error::invalid(format!(
                "source {k} at radius {:.4} is not strictly inside the sphere (R = {head_radius})",
                d.position.norm()
            )));
        }
    }
    let sensors: Vec<Vector3<f64>> = sensor_dirs.iter().map(|u| u.normalize()).collect();
    let dipoles: Vec<Dipole> = dipoles
        .iter()
        .map(|d| Dipole {
            position: d.position,
            orientation: d.orientation.normalize(),
        })
        .collect();
    let gain = DMatrix::from_fn(sensors.len(), dipoles.len(), |i, k| {
        dipole_potential(&(sensors[i] * head_radius), &dipoles[k], CONDUCTIVITY)
    });
    LeadField::new(
        gain,
        sensors,
        dipoles.iter().map(|d| d.position).collect(),
        dipoles.iter().map(|d| d.orientation).collect(),
    )
}

/// Evenly spread unit vectors over the cap `z >= z_min` (Fibonacci lattice).
pub fn fibonacci_cap(n: usize, z_min: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64 * (1.0 - z_min);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Electrode directions of the default montage: 32 sites over the upper head.
pub fn default_sensor_directions(n: usize) -> Vec<Vector3<f64>> {
    fibonacci_cap(n, -0.15)
}

/// Built-in cortical source space.
///
/// `n_regions` patch centres sit on a shell at 0.75 R; each patch holds a
/// contiguous run of sources jittered around its centre, at depths between
/// 0.70 R and 0.80 R, oriented radially. Returns the dipoles and the size of
/// each patch in index order.
pub fn default_source_space(
    n_sources: usize,
    n_regions: usize,
    head_radius: f64,
) -> Result<(Vec<Dipole>, Vec<usize>)> {
    if n_regions == 0 || n_sources < n_regions {
        return Err(Error::invalid(format!(
            "need at least one source per region ({n_sources} sources, {n_regions} regions)"
        )));
    }
    let centres = fibonacci_cap(n_regions, -0.1);
    let base = n_sources / n_regions;
    let extra = n_sources % n_regions;
    let sizes: Vec<usize> = (0..n_regions).map(|r| base + usize::from(r < extra)).collect();
    let spread = 0.6 * (2.0 * PI * 1.1 / n_regions as f64 / PI).sqrt();

    let mut dipoles = Vec::with_capacity(n_sources);
    for (centre, &size) in centres.iter().zip(&sizes) {
        let helper = if centre.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let e1 = centre.cross(&helper).normalize();
        let e2 = centre.cross(&e1);
        for j in 0..size {
            let rho = spread * ((j as f64 + 0.5) / size as f64).sqrt();
            let ang = j as f64 * GOLDEN_ANGLE;
            let dir = (centre + (e1 * ang.cos() + e2 * ang.sin()) * rho).normalize();
            let depth = [0.75, 0.70, 0.80][j % 3] * head_radius;
            dipoles.push(Dipole {
                position: dir * depth,
                orientation: dir,
            });
        }
    }
    Ok((dipoles, sizes))
}
