use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over every entry, with its gradient
/// `2 (pred - target) / count`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len().max(1) as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = Tensor::new(pred.shape().to_vec(), diff.iter().map(|d| 2.0 * d / n).collect())?;
    Ok((loss, grad))
}

/// Loss value only, on flat buffers.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!("mse: {} vs {} values", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_and_unit_offset() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mse_loss(&t, &t).unwrap().0, 0.0);
        let p = Tensor::new(vec![2, 3], t.data().iter().map(|v| v + 1.0).collect()).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.data().iter().all(|&v| (v - 2.0 / 6.0).abs() < 1e-15));
        assert!(mse_loss(&t, &Tensor::zeros(&[3, 2])).is_err());
    }
}
