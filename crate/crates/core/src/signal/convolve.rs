//! Linear convolution, direct for short kernels and FFT-based otherwise.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

const DIRECT_LIMIT: usize = 64;

/// Full linear convolution (`a.len() + b.len() - 1` samples).
pub fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    if a.len().min(b.len()) <= DIRECT_LIMIT {
        return direct(a, b);
    }
    let mut conv = FftConvolver::new(b, a.len());
    conv.apply(a)
}

fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Convolves many equal-length signals with one kernel, planning the FFT once.
pub struct FftConvolver {
    n_fft: usize,
    signal_len: usize,
    kernel_len: usize,
    kernel_spectrum: Vec<Complex<f64>>,
    planner: FftPlanner<f64>,
}

impl FftConvolver {
    pub fn new(kernel: &[f64], signal_len: usize) -> Self {
        let n_fft = (signal_len + kernel.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let mut spec: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
        spec.resize(n_fft, Complex::new(0.0, 0.0));
        fft.process(&mut spec);
        FftConvolver {
            n_fft,
            signal_len,
            kernel_len: kernel.len(),
            kernel_spectrum: spec,
            planner,
        }
    }

    pub fn apply(&mut self, signal: &[f64]) -> Vec<f64> {
        assert_eq!(signal.len(), self.signal_len, "convolver planned for another length");
        let fwd = self.planner.plan_fft_forward(self.n_fft);
        let inv = self.planner.plan_fft_inverse(self.n_fft);
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.n_fft, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        for (x, k) in buf.iter_mut().zip(&self.kernel_spectrum) {
            *x *= k;
        }
        inv.process(&mut buf);
        let scale = 1.0 / self.n_fft as f64;
        buf[..self.signal_len + self.kernel_len - 1]
            .iter()
            .map(|c| c.re * scale)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_path_matches_direct() {
        let a: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let b: Vec<f64> = (0..129).map(|i| ((i * 104729) % 37) as f64 / 18.0 - 1.0).collect();
        let fast = convolve_full(&a, &b);
        let slow = direct(&a, &b);
        assert_eq!(fast.len(), slow.len());
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn short_kernel() {
        assert_eq!(convolve_full(&[1.0, 2.0, 3.0], &[1.0, 1.0]), vec![1.0, 3.0, 5.0, 3.0]);
    }
}
