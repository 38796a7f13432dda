//! Standardized minimum-norm (sLORETA) inverse operator.
//!
//! With gain `A`, noise covariance `C` and regularization `α`:
//! `M = Aᵀ (A Aᵀ + α C)⁻¹`, resolution `R = M A`, and the standardized
//! kernel row `j` is `M_j / sqrt(R_jj)`.

use nalgebra::DMatrix;

use super::leadfield::LeadField;
use crate::error::{Error, Result};

/// Signal-to-noise ratio assumed by [`Regularization::Auto`].
pub const AUTO_SNR: f64 = 3.0;

/// Relative pivot below which the regularized Gram matrix counts as singular.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    Fixed(f64),
    /// `α = trace(A Aᵀ) / (trace(C) · SNR²)` with SNR = 3; reduces to
    /// `trace(A Aᵀ) / (I · 9)` for identity noise.
    Auto,
}

impl std::str::FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Regularization::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("alpha must be 'auto' or a number, got {s:?}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {v}")));
        }
        Ok(Regularization::Fixed(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCov {
    Identity,
    Matrix(DMatrix<f64>),
}

/// K × I map from EEG to standardized source activity.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseOperator {
    kernel: DMatrix<f64>,
    alpha: f64,
    noise_cov_desc: String,
}

impl InverseOperator {
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise_cov_desc(&self) -> &str {
        &self.noise_cov_desc
    }

    pub fn n_sensors(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn n_sources(&self) -> usize {
        self.kernel.nrows()
    }
}

/// Standardized source time courses.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEstimate {
    /// K × samples, signed.
    pub activations: DMatrix<f64>,
    pub fs: f64,
}

pub fn sloreta_inverse_operator(
    lf: &LeadField,
    noise_cov: &NoiseCov,
    reg: Regularization,
) -> Result<InverseOperator> {
    sloreta_from_gain(lf.gain(), noise_cov, reg)
}

/// Builds the operator from a bare gain matrix. Unlike [`LeadField`] this
/// accepts square gains, which is handy for checking the construction.
pub fn sloreta_from_gain(
    gain: &DMatrix<f64>,
    noise_cov: &NoiseCov,
    reg: Regularization,
) -> Result<InverseOperator> {
    let n_sensors = gain.nrows();
    let (cov, desc) = match noise_cov {
        NoiseCov::Identity => (DMatrix::identity(n_sensors, n_sensors), "identity".to_string()),
        NoiseCov::Matrix(c) => {
            check_spd(c, n_sensors)?;
            (c.clone(), format!("user {n}x{n}", n = c.nrows()))
        }
    };

    let gram = gain * gain.transpose();
    let alpha = match reg {
        Regularization::Fixed(a) if a.is_finite() && a >= 0.0 => a,
        Regularization::Fixed(a) => return Err(Error::invalid(format!("alpha must be >= 0, got {a}"))),
        Regularization::Auto => gram.trace() / (cov.trace() * AUTO_SNR * AUTO_SNR),
    };
    let system = &gram + &cov * alpha;

    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("A Aᵀ + αC is not positive definite (α = {alpha})")))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d * d), hi.max(d * d)));
    if lo <= PIVOT_TOL * hi {
        return Err(Error::Singular(format!(
            "A Aᵀ + αC is numerically singular (α = {alpha}, pivot ratio {:.3e})",
            lo / hi
        )));
    }

    // X = (A Aᵀ + αC)⁻¹ A, so M = Xᵀ.
    let x = chol.solve(gain);
    let mut kernel = x.transpose();
    for j in 0..kernel.nrows() {
        let r_jj = x.column(j).dot(&gain.column(j));
        if !(r_jj > 0.0) {
            return Err(Error::Singular(format!("resolution diagonal R[{j},{j}] = {r_jj} is not positive")));
        }
        kernel.row_mut(j).scale_mut(1.0 / r_jj.sqrt());
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("inverse kernel has non-finite entries".into()));
    }
    Ok(InverseOperator {
        kernel,
        alpha,
        noise_cov_desc: desc,
    })
}

fn check_spd(c: &DMatrix<f64>, n: usize) -> Result<()> {
    if c.shape() != (n, n) {
        return Err(Error::shape(format!("noise covariance is {:?}, expected {n}x{n}", c.shape())));
    }
    let asym = (c - c.transpose()).amax();
    if asym > 1e-10 * c.amax().max(1e-300) {
        return Err(Error::invalid("noise covariance is not symmetric"));
    }
    if c.clone().cholesky().is_none() {
        return Err(Error::invalid("noise covariance is not positive definite"));
    }
    Ok(())
}

/// `activations = kernel · eeg`.
pub fn apply_inverse(op: &InverseOperator, eeg: &DMatrix<f64>, fs: f64) -> Result<SourceEstimate> {
    if eeg.nrows() != op.n_sensors() {
        return Err(Error::shape(format!(
            "operator expects {} channels, EEG has {}",
            op.n_sensors(),
            eeg.nrows()
        )));
    }
    Ok(SourceEstimate {
        activations: &op.kernel * eeg,
        fs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_gain_gives_identity_kernel() {
        let op = sloreta_from_gain(&DMatrix::identity(6, 6), &NoiseCov::Identity, Regularization::Fixed(0.0))
            .unwrap();
        assert!((op.kernel() - DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
    }

    #[test]
    fn kernel_rows_are_finite_with_positive_resolution() {
        let a = random(8, 40, 1);
        for reg in [Regularization::Auto, Regularization::Fixed(0.5), Regularization::Fixed(0.0)] {
            let op = sloreta_from_gain(&a, &NoiseCov::Identity, reg).unwrap();
            assert_eq!(op.kernel().shape(), (40, 8));
            assert!(op.kernel().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rank_deficient_gain_without_regularization_is_singular() {
        let mut a = random(5, 20, 2);
        let r0 = a.row(0).clone_owned();
        a.row_mut(4).copy_from(&r0);
        assert!(matches!(
            sloreta_from_gain(&a, &NoiseCov::Identity, Regularization::Fixed(0.0)),
            Err(Error::Singular(_))
        ));
        assert!(sloreta_from_gain(&a, &NoiseCov::Identity, Regularization::Auto).is_ok());
    }

    #[test]
    fn exact_localization_on_random_gain() {
        let a = random(10, 60, 3);
        let op = sloreta_from_gain(&a, &NoiseCov::Identity, Regularization::Auto).unwrap();
        for j in 0..60 {
            let s = op.kernel() * a.column(j);
            assert_eq!(s.iamax(), j);
        }
    }

    #[test]
    fn apply_is_linear() {
        let a = random(6, 30, 4);
        let op = sloreta_from_gain(&a, &NoiseCov::Identity, Regularization::Auto).unwrap();
        let e1 = random(6, 12, 5);
        let e2 = random(6, 12, 6);
        let s1 = apply_inverse(&op, &e1, 100.0).unwrap().activations;
        let s2 = apply_inverse(&op, &e2, 100.0).unwrap().activations;
        let s12 = apply_inverse(&op, &(&e1 + &e2), 100.0).unwrap().activations;
        assert!((s12 - (&s1 + &s2)).amax() < 1e-12);
        let scaled = apply_inverse(&op, &(&e1 * 2.5), 100.0).unwrap().activations;
        assert!((scaled - &s1 * 2.5).amax() < 1e-12);
        let zero = apply_inverse(&op, &DMatrix::zeros(6, 12), 100.0).unwrap().activations;
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(apply_inverse(&op, &DMatrix::zeros(5, 12), 100.0).is_err());
    }

    #[test]
    fn non_spd_noise_is_rejected() {
        let a = random(3, 9, 7);
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(sloreta_from_gain(&a, &NoiseCov::Matrix(c), Regularization::Auto).is_err());
    }

    #[test]
    fn parses_alpha() {
        assert_eq!("auto".parse::<Regularization>().unwrap(), Regularization::Auto);
        assert_eq!("0.25".parse::<Regularization>().unwrap(), Regularization::Fixed(0.25));
        assert!("-1".parse::<Regularization>().is_err());
    }
}
