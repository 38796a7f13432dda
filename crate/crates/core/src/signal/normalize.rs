//! Per-row min-max and z-score normalization with reusable statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted per-row statistics, applied later to held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NormStats {
    MinMax {
        min: Vec<f64>,
        max: Vec<f64>,
        fitted_on: String,
    },
    ZScore {
        mean: Vec<f64>,
        std: Vec<f64>,
        fitted_on: String,
    },
}

impl NormStats {
    /// Fits min/max per row across every given segment.
    pub fn fit_minmax(segments: &[&DMatrix<f64>], fitted_on: impl Into<String>) -> Result<Self> {
        let rows = common_rows(segments)?;
        let mut min = vec![f64::INFINITY; rows];
        let mut max = vec![f64::NEG_INFINITY; rows];
        for seg in segments {
            for r in 0..rows {
                for &v in seg.row(r).iter() {
                    min[r] = min[r].min(v);
                    max[r] = max[r].max(v);
                }
            }
        }
        if let Some(r) = (0..rows).find(|&r| !(max[r] > min[r])) {
            return Err(Error::invalid(format!(
                "row {r} is degenerate (max == min == {}), cannot min-max normalize",
                min[r]
            )));
        }
        Ok(NormStats::MinMax {
            min,
            max,
            fitted_on: fitted_on.into(),
        })
    }

    /// Fits mean and population std per row across every given segment.
    pub fn fit_zscore(segments: &[&DMatrix<f64>], fitted_on: impl Into<String>) -> Result<Self> {
        let rows = common_rows(segments)?;
        let count: usize = segments.iter().map(|s| s.ncols()).sum();
        if count == 0 {
            return Err(Error::invalid("no samples to fit z-score statistics"));
        }
        let n = count as f64;
        let mut mean = vec![0.0; rows];
        for seg in segments {
            for r in 0..rows {
                mean[r] += seg.row(r).sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; rows];
        for seg in segments {
            for r in 0..rows {
                var[r] += seg.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>();
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        if let Some(r) = (0..rows).find(|&r| !(std[r] > 0.0)) {
            return Err(Error::invalid(format!("row {r} has zero variance, cannot z-score")));
        }
        Ok(NormStats::ZScore {
            mean,
            std,
            fitted_on: fitted_on.into(),
        })
    }

    pub fn rows(&self) -> usize {
        match self {
            NormStats::MinMax { min, .. } => min.len(),
            NormStats::ZScore { mean, .. } => mean.len(),
        }
    }

    /// Affine map; no clamping, so held-out data may leave the fitted range.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m)?;
        let mut out = m.clone();
        for r in 0..m.nrows() {
            let (offset, scale) = self.affine(r);
            out.row_mut(r).apply(|v| *v = (*v - offset) / scale);
        }
        Ok(out)
    }

    /// Inverse of [`NormStats::apply`].
    pub fn invert(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m)?;
        let mut out = m.clone();
        for r in 0..m.nrows() {
            let (offset, scale) = self.affine(r);
            out.row_mut(r).apply(|v| *v = *v * scale + offset);
        }
        Ok(out)
    }

    fn affine(&self, r: usize) -> (f64, f64) {
        match self {
            NormStats::MinMax { min, max, .. } => (min[r], max[r] - min[r]),
            NormStats::ZScore { mean, std, .. } => (mean[r], std[r]),
        }
    }

    fn check_rows(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.rows() {
            return Err(Error::shape(format!(
                "statistics fitted for {} rows, data has {}",
                self.rows(),
                m.nrows()
            )));
        }
        Ok(())
    }
}

fn common_rows(segments: &[&DMatrix<f64>]) -> Result<usize> {
    let rows = segments
        .first()
        .ok_or_else(|| Error::invalid("no data to fit statistics on"))?
        .nrows();
    if segments.iter().any(|s| s.nrows() != rows) {
        return Err(Error::shape("segments disagree on row count"));
    }
    Ok(rows)
}

/// Maps each row to [0, 1], fitting on `m` unless `stats` is given.
pub fn minmax_normalize(
    m: &DMatrix<f64>,
    stats: Option<&NormStats>,
) -> Result<(DMatrix<f64>, NormStats)> {
    let stats = match stats {
        Some(s @ NormStats::MinMax { .. }) => s.clone(),
        Some(_) => return Err(Error::invalid("expected min-max statistics")),
        None => NormStats::fit_minmax(&[m], "input")?,
    };
    Ok((stats.apply(m)?, stats))
}

/// Standardizes each row (population std), fitting on `m` unless `stats` is given.
pub fn zscore_normalize(
    m: &DMatrix<f64>,
    stats: Option<&NormStats>,
) -> Result<(DMatrix<f64>, NormStats)> {
    let stats = match stats {
        Some(s @ NormStats::ZScore { .. }) => s.clone(),
        Some(_) => return Err(Error::invalid("expected z-score statistics")),
        None => NormStats::fit_zscore(&[m], "input")?,
    };
    Ok((stats.apply(m)?, stats))
}
