//! Lead-field matrix with geometry, and its binary file format.
//!
//! ```text
//! magic    8 bytes "PMLEADF\0"
//! version  u8 = 1
//! sensors  u32 (I), sources u32 (K)
//! gain     I × K f64 row-major
//! sensor unit vectors I × 3, source positions K × 3, orientations K × 3
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Vector3};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::session::row_major;

const MAGIC: &[u8; 8] = b"PMLEADF\0";
const VERSION: u8 = 1;

/// Sensors × sources gain matrix for fixed-orientation dipoles.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    gain: DMatrix<f64>,
    sensor_positions: Vec<Vector3<f64>>,
    source_positions: Vec<Vector3<f64>>,
    source_orientations: Vec<Vector3<f64>>,
}

impl LeadField {
    pub fn new(
        gain: DMatrix<f64>,
        sensor_positions: Vec<Vector3<f64>>,
        source_positions: Vec<Vector3<f64>>,
        source_orientations: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let (i, k) = gain.shape();
        if sensor_positions.len() != i
            || source_positions.len() != k
            || source_orientations.len() != k
        {
            return Err(Error::shape(format!(
                "gain is {i}x{k} but geometry has {} sensors, {} positions, {} orientations",
                sensor_positions.len(),
                source_positions.len(),
                source_orientations.len()
            )));
        }
        if i >= k {
            return Err(Error::invalid(format!(
                "lead field must be under-determined (sensors {i} < sources {k})"
            )));
        }
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lead field has non-finite entries"));
        }
        if let Some(col) = (0..k).find(|&c| gain.column(c).iter().all(|&v| v == 0.0)) {
            return Err(Error::invalid(format!("source {col} is invisible (all-zero gain column)")));
        }
        Ok(LeadField {
            gain,
            sensor_positions,
            source_positions,
            source_orientations,
        })
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn n_sensors(&self) -> usize {
        self.gain.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.ncols()
    }

    pub fn sensor_positions(&self) -> &[Vector3<f64>] {
        &self.sensor_positions
    }

    pub fn source_positions(&self) -> &[Vector3<f64>] {
        &self.source_positions
    }

    pub fn source_orientations(&self) -> &[Vector3<f64>] {
        &self.source_orientations
    }

    /// Same lead field expressed against the average reference, matching
    /// average-referenced EEG.
    pub fn average_referenced(&self) -> Result<LeadField> {
        let gain = crate::signal::average_rereference(&self.gain)?;
        LeadField::new(
            gain,
            self.sensor_positions.clone(),
            self.source_positions.clone(),
            self.source_orientations.clone(),
        )
    }
}

pub fn save_lead_field(lf: &LeadField, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    write_lead_field(lf, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_lead_field(path: &Path) -> Result<LeadField> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_lead_field(&mut BufReader::new(f))
}

pub fn write_lead_field<W: Write>(lf: &LeadField, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u8(w, VERSION)?;
    write_u32(w, lf.n_sensors() as u32)?;
    write_u32(w, lf.n_sources() as u32)?;
    write_f64s(w, &row_major(&lf.gain))?;
    for v in lf
        .sensor_positions
        .iter()
        .chain(&lf.source_positions)
        .chain(&lf.source_orientations)
    {
        write_f64s(w, v.as_slice())?;
    }
    Ok(())
}

pub fn read_lead_field<R: Read>(r: &mut R) -> Result<LeadField> {
    const WHAT: &str = "lead field";
    expect_magic(r, MAGIC, WHAT)?;
    let version = read_u8(r, WHAT)?;
    if version != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let i = read_u32(r, WHAT)? as usize;
    let k = read_u32(r, WHAT)? as usize;
    let gain = DMatrix::from_row_slice(i, k, &read_f64s(r, i * k, WHAT)?);
    let mut vecs = |n: usize| -> Result<Vec<Vector3<f64>>> {
        let flat = read_f64s(r, n * 3, WHAT)?;
        Ok(flat.chunks_exact(3).map(Vector3::from_column_slice).collect())
    };
    let sensors = vecs(i)?;
    let positions = vecs(k)?;
    let orientations = vecs(k)?;
    LeadField::new(gain, sensors, positions, orientations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LeadField {
        let gain = DMatrix::from_fn(2, 3, |i, k| (i * 3 + k) as f64 + 0.5);
        LeadField::new(
            gain,
            vec![Vector3::x(), Vector3::y()],
            vec![Vector3::zeros(); 3],
            vec![Vector3::z(); 3],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let lf = small();
        let mut buf = Vec::new();
        write_lead_field(&lf, &mut buf).unwrap();
        assert_eq!(read_lead_field(&mut buf.as_slice()).unwrap(), lf);
    }

    #[test]
    fn invariants_are_enforced() {
        let geo = |k| (vec![Vector3::x(); 2], vec![Vector3::zeros(); k], vec![Vector3::z(); k]);
        let (s, p, o) = geo(2);
        assert!(LeadField::new(DMatrix::identity(2, 2), s, p, o).is_err());
        let (s, p, o) = geo(3);
        let mut g = DMatrix::from_element(2, 3, 1.0);
        g.column_mut(1).fill(0.0);
        assert!(LeadField::new(g, s, p, o).is_err());
    }
}
