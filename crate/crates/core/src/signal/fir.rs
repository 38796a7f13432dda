//! Hamming-windowed-sinc FIR design and zero-phase (forward-backward) filtering.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::convolve::{convolve_full, FftConvolver};
use crate::error::{Error, Result};

/// Pass band of a designed kernel, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterBand {
    Lowpass { cutoff: f64 },
    Bandpass { low: f64, high: f64 },
}

/// Symmetric, odd-length linear-phase FIR kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FirKernel {
    taps: Vec<f64>,
    fs: f64,
    band: FilterBand,
}

impl FirKernel {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn band(&self) -> FilterBand {
        self.band
    }

    /// |H(f)| of a single (forward-only) pass.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let c = (self.taps.len() - 1) as f64 / 2.0;
        let w = 2.0 * PI * freq_hz / self.fs;
        // Linear phase: H(f) = e^{-jwc} * sum h[n] cos(w (n - c)).
        self.taps
            .iter()
            .enumerate()
            .map(|(n, h)| h * (w * (n as f64 - c)).cos())
            .sum::<f64>()
            .abs()
    }
}

/// Designs a Hamming-windowed sinc kernel.
///
/// Each lowpass prototype is scaled to unit DC gain; a bandpass is the
/// difference of two such prototypes, so its DC gain is exactly zero.
pub fn design_fir(band: FilterBand, fs: f64, num_taps: usize) -> Result<FirKernel> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::invalid(format!("sampling rate must be > 0, got {fs}")));
    }
    if num_taps % 2 == 0 || num_taps < 3 {
        return Err(Error::invalid(format!("tap count must be odd and >= 3, got {num_taps}")));
    }
    let nyquist = fs / 2.0;
    let edge_ok = |f: f64| f.is_finite() && f > 0.0 && f < nyquist;
    let taps = match band {
        FilterBand::Lowpass { cutoff } => {
            if !edge_ok(cutoff) {
                return Err(Error::invalid(format!(
                    "cutoff {cutoff} Hz must lie strictly inside (0, {nyquist})"
                )));
            }
            lowpass_prototype(cutoff / fs, num_taps)
        }
        FilterBand::Bandpass { low, high } => {
            if !(edge_ok(low) && edge_ok(high) && low < high) {
                return Err(Error::invalid(format!(
                    "band ({low}, {high}) Hz must satisfy 0 < low < high < {nyquist}"
                )));
            }
            let hi = lowpass_prototype(high / fs, num_taps);
            let lo = lowpass_prototype(low / fs, num_taps);
            hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
        }
    };
    Ok(FirKernel { taps, fs, band })
}

/// Normalized cutoff `fc` in cycles/sample.
fn lowpass_prototype(fc: f64, num_taps: usize) -> Vec<f64> {
    let m = (num_taps - 1) as f64;
    let half = num_taps / 2;
    let mut taps = vec![0.0; num_taps];
    for n in 0..=half {
        let x = n as f64 - m / 2.0;
        let sinc = if x == 0.0 {
            2.0 * fc
        } else {
            (2.0 * PI * fc * x).sin() / (PI * x)
        };
        let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
        taps[n] = sinc * window;
        taps[num_taps - 1 - n] = taps[n];
    }
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    taps
}

/// 0.1-40 Hz EEG band-pass; 2 s of taps (1001 at 500 Hz).
pub fn eeg_bandpass(fs: f64) -> Result<FirKernel> {
    design_fir(FilterBand::Bandpass { low: 0.1, high: 40.0 }, fs, odd_taps(2.0 * fs))
}

/// 2 Hz kinematics low-pass; 3 s of taps (301 at 100 Hz).
pub fn kinematics_lowpass(fs: f64) -> Result<FirKernel> {
    design_fir(FilterBand::Lowpass { cutoff: 2.0 }, fs, odd_taps(3.0 * fs))
}

pub(crate) fn odd_taps(n: f64) -> usize {
    let n = n.ceil().max(3.0) as usize;
    n | 1
}

/// Zero-phase filtering: forward then backward pass with odd reflection
/// padding of `taps - 1` samples on each side. Output length equals input.
pub fn filtfilt(x: &[f64], kernel: &FirKernel) -> Result<Vec<f64>> {
    check_length(x.len(), kernel)?;
    let padded = reflect_pad(x, kernel.len() - 1);
    let twice = convolve_full(&autocorrelation(kernel), &padded);
    Ok(trim(&twice, x.len(), kernel.len()))
}

/// Applies [`filtfilt`] to every row of a channels × samples matrix.
pub fn filtfilt_rows(m: &DMatrix<f64>, kernel: &FirKernel) -> Result<DMatrix<f64>> {
    let (rows, n) = m.shape();
    check_length(n, kernel)?;
    let pad = kernel.len() - 1;
    let g = autocorrelation(kernel);
    let mut conv = FftConvolver::new(&g, n + 2 * pad);
    let mut out = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        let y = trim(&conv.apply(&reflect_pad(&row, pad)), n, kernel.len());
        for (t, v) in y.into_iter().enumerate() {
            out[(r, t)] = v;
        }
    }
    Ok(out)
}

fn check_length(n: usize, kernel: &FirKernel) -> Result<()> {
    if n <= 3 * kernel.len() {
        return Err(Error::invalid(format!(
            "series of {n} samples too short for a {}-tap zero-phase filter (need > {})",
            kernel.len(),
            3 * kernel.len()
        )));
    }
    Ok(())
}

/// Forward and backward passes of a symmetric kernel equal one pass of its
/// autocorrelation.
fn autocorrelation(kernel: &FirKernel) -> Vec<f64> {
    let rev: Vec<f64> = kernel.taps.iter().rev().copied().collect();
    convolve_full(&kernel.taps, &rev)
}

fn trim(full: &[f64], n: usize, taps: usize) -> Vec<f64> {
    // Padding of taps-1 plus the autocorrelation's centre at taps-1.
    let offset = 2 * (taps - 1);
    full[offset..offset + n].to_vec()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
    out
}
