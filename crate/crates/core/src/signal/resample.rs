//! Integer-factor decimation with a zero-phase anti-alias filter.

use nalgebra::DMatrix;

use super::fir::{design_fir, filtfilt, filtfilt_rows, odd_taps, FilterBand, FirKernel};
use crate::error::{Error, Result};

/// `fs_in / fs_out` as an integer, or an error for non-integer ratios.
pub fn decimation_factor(fs_in: f64, fs_out: f64) -> Result<usize> {
    if !(fs_in > 0.0 && fs_out > 0.0 && fs_out <= fs_in) {
        return Err(Error::invalid(format!("cannot downsample {fs_in} Hz to {fs_out} Hz")));
    }
    let ratio = fs_in / fs_out;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{fs_in} Hz is not an integer multiple of {fs_out} Hz"
        )));
    }
    Ok(rounded as usize)
}

/// Low-pass at 0.4·fs_out, designed at the input rate. The Hamming transition
/// width (about 3.3·fs/taps) is set to 0.2·fs_out.
pub fn antialias_kernel(fs_in: f64, fs_out: f64) -> Result<FirKernel> {
    let taps = odd_taps(3.3 * fs_in / (0.2 * fs_out));
    design_fir(FilterBand::Lowpass { cutoff: 0.4 * fs_out }, fs_in, taps)
}

/// Sample index after decimation by `factor` (floor rounding).
pub fn rescale_index(index: usize, factor: usize) -> usize {
    index / factor
}

/// Anti-aliases then keeps every `factor`-th sample starting at index 0.
/// Equal rates return the input unchanged.
pub fn downsample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    let factor = decimation_factor(fs_in, fs_out)?;
    if factor == 1 {
        return Ok(x.to_vec());
    }
    let filtered = filtfilt(x, &antialias_kernel(fs_in, fs_out)?)?;
    Ok(filtered.into_iter().step_by(factor).collect())
}

/// Row-wise [`downsample`] of a channels × samples matrix.
pub fn downsample_rows(m: &DMatrix<f64>, fs_in: f64, fs_out: f64) -> Result<DMatrix<f64>> {
    let factor = decimation_factor(fs_in, fs_out)?;
    if factor == 1 {
        return Ok(m.clone());
    }
    let filtered = filtfilt_rows(m, &antialias_kernel(fs_in, fs_out)?)?;
    let n_out = m.ncols().div_ceil(factor);
    Ok(DMatrix::from_fn(m.nrows(), n_out, |r, t| filtered[(r, t * factor)]))
}
