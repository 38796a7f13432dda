//! Multiple linear regression baseline (ridge with an unpenalized intercept).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::gemm::gemm;
use crate::binio::*;
use crate::error::{Error, Result};
use crate::session::KIN_AXES;

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Weights `(D + 1) × 3`: row 0 is the intercept, rows 1..=D the slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel {
    pub weights: DMatrix<f64>,
}

/// Fits on row-major `inputs` (T × D) and `targets` (T × 3).
pub fn mlr_fit(inputs: &[f64], targets: &[f64], dim: usize, lambda: f64) -> Result<MlrModel> {
    if dim == 0 || inputs.len() % dim != 0 {
        return Err(Error::shape(format!("{} input values do not split into rows of {dim}", inputs.len())));
    }
    let t = inputs.len() / dim;
    if targets.len() != t * KIN_AXES {
        return Err(Error::shape(format!("{t} input rows but {} target values", targets.len())));
    }
    if t == 0 || !(lambda >= 0.0) {
        return Err(Error::invalid("mlr needs at least one row and lambda >= 0"));
    }
    let mean = |buf: &[f64], w: usize| {
        let mut m = vec![0.0; w];
        for row in buf.chunks_exact(w) {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= t as f64);
        m
    };
    let x_mean = mean(inputs, dim);
    let y_mean = mean(targets, KIN_AXES);
    let center = |buf: &[f64], m: &[f64]| -> Vec<f64> {
        buf.chunks_exact(m.len()).flat_map(|row| row.iter().zip(m).map(|(a, b)| a - b)).collect()
    };
    let xc = center(inputs, &x_mean);
    let yc = center(targets, &y_mean);

    let mut gram = vec![0.0; dim * dim];
    gemm(dim, t, dim, &xc, true, &xc, false, 0.0, &mut gram);
    let mut rhs = vec![0.0; dim * KIN_AXES];
    gemm(dim, t, KIN_AXES, &xc, true, &yc, false, 0.0, &mut rhs);
    let mut g = DMatrix::from_row_slice(dim, dim, &gram);
    for i in 0..dim {
        g[(i, i)] += lambda;
    }
    let chol = g.cholesky().ok_or_else(|| Error::Singular("mlr normal equations are not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if lo / hi <= 1e-7 {
        return Err(Error::Singular(format!(
            "mlr normal equations are numerically singular (pivot ratio {:.1e}); use lambda > 0",
            lo / hi
        )));
    }
    let slopes = chol.solve(&DMatrix::from_row_slice(dim, KIN_AXES, &rhs));
    let mut weights = DMatrix::zeros(dim + 1, KIN_AXES);
    for a in 0..KIN_AXES {
        let offset: f64 = (0..dim).map(|i| x_mean[i] * slopes[(i, a)]).sum();
        weights[(0, a)] = y_mean[a] - offset;
    }
    weights.rows_mut(1, dim).copy_from(&slopes);
    Ok(MlrModel { weights })
}

impl MlrModel {
    pub fn input_width(&self) -> usize {
        self.weights.nrows() - 1
    }

    /// Row-major predictions (T × 3).
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let dim = self.input_width();
        if inputs.len() % dim != 0 {
            return Err(Error::shape(format!("model expects rows of {dim} features")));
        }
        let t = inputs.len() / dim;
        let slopes: Vec<f64> = crate::session::row_major(&self.weights.rows(1, dim).into_owned());
        let mut out = vec![0.0; t * KIN_AXES];
        for row in out.chunks_exact_mut(KIN_AXES) {
            for a in 0..KIN_AXES {
                row[a] = self.weights[(0, a)];
            }
        }
        gemm(t, dim, KIN_AXES, inputs, false, &slopes, false, 1.0, &mut out);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(&mut BufReader::new(f))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MLR_MAGIC)?;
        write_u8(w, 1)?;
        write_u64(w, self.input_width() as u64)?;
        write_f64s(w, &crate::session::row_major(&self.weights))
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "mlr model file";
        expect_magic(r, MLR_MAGIC, WHAT)?;
        if read_u8(r, WHAT)? != 1 {
            return Err(Error::format(WHAT, "unsupported version"));
        }
        let dim = read_u64(r, WHAT)? as usize;
        let data = read_f64s(r, (dim + 1) * KIN_AXES, WHAT)?;
        Ok(MlrModel {
            weights: DMatrix::from_row_slice(dim + 1, KIN_AXES, &data),
        })
    }
}

pub(crate) const MLR_MAGIC: &[u8; 8] = b"PMMLREG\0";

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let (t, d) = (50, 4);
        let x = random(t, d, 1);
        let w = [[0.5, -1.0, 2.0], [1.5, 0.0, -0.3], [-2.0, 0.7, 0.1], [0.2, 0.2, 0.2]];
        let b = [3.0, -1.0, 0.25];
        let y: Vec<f64> = x
            .chunks_exact(d)
            .flat_map(|row| (0..3).map(move |a| b[a] + (0..d).map(|i| row[i] * w[i][a]).sum::<f64>()))
            .collect();
        let m = mlr_fit(&x, &y, d, 0.0).unwrap();
        for a in 0..3 {
            assert!((m.weights[(0, a)] - b[a]).abs() < 1e-6);
            for i in 0..d {
                assert!((m.weights[(i + 1, a)] - w[i][a]).abs() < 1e-6);
            }
        }
        let pred = m.predict(&x).unwrap();
        assert!(pred.iter().zip(&y).all(|(p, t)| (p - t).abs() < 1e-9));
    }

    #[test]
    fn zero_inputs_give_target_means() {
        let x = vec![0.0; 6 * 2];
        let y: Vec<f64> = (0..18).map(|v| v as f64).collect();
        let m = mlr_fit(&x, &y, 2, DEFAULT_RIDGE).unwrap();
        assert_eq!(m.weights.row(0).iter().copied().collect::<Vec<_>>(), vec![7.5, 8.5, 9.5]);
        assert!(mlr_fit(&x, &y, 2, 0.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let x = random(20, 3, 2);
        let y = random(20, 3, 3);
        let m = mlr_fit(&x, &y, 3, DEFAULT_RIDGE).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(MlrModel::read(&mut buf.as_slice()).unwrap(), m);
    }
}
