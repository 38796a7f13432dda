use crate::error::{Error, Result};
use crate::session::KIN_AXES;

/// Per-axis Pearson correlation between row-major T × 3 buffers.
///
/// An axis whose actual or predicted values have no spread yields NaN (and
/// a warning) rather than a spurious ±1.
pub fn pearson_cv(actual: &[f64], predicted: &[f64]) -> Result<[f64; 3]> {
    if actual.len() != predicted.len() || actual.len() % KIN_AXES != 0 {
        return Err(Error::shape(format!(
            "pearson_cv needs two T x 3 buffers, got {} and {} values",
            actual.len(),
            predicted.len()
        )));
    }
    let t = actual.len() / KIN_AXES;
    if t < 2 {
        return Err(Error::invalid(format!("pearson_cv needs at least 2 samples, got {t}")));
    }
    let mut out = [0.0; 3];
    for (axis, cv) in out.iter_mut().enumerate() {
        let a: Vec<f64> = actual.iter().skip(axis).step_by(KIN_AXES).copied().collect();
        let p: Vec<f64> = predicted.iter().skip(axis).step_by(KIN_AXES).copied().collect();
        *cv = match (spread(&a), spread(&p)) {
            (Some((ma, sa)), Some((mp, sp))) => {
                let cov: f64 = a.iter().zip(&p).map(|(x, y)| (x - ma) * (y - mp)).sum();
                (cov / (sa * sp)).clamp(-1.0, 1.0)
            }
            _ => {
                log::warn!("pearson_cv: axis {axis} has zero variance, CV undefined");
                f64::NAN
            }
        };
    }
    Ok(out)
}

/// Mean and root sum of squared deviations, or `None` when the values are
/// constant (exactly, or to within round-off of their magnitude).
fn spread(v: &[f64]) -> Option<(f64, f64)> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let rms = (ss / v.len() as f64).sqrt();
    if !ss.is_finite() || v.iter().all(|&x| x == v[0]) || rms <= 1e-12 * scale {
        return None;
    }
    Some((mean, ss.sqrt()))
}
