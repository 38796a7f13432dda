use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Subtracts the across-channel mean from every sample (column).
pub fn average_rereference(eeg: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if eeg.nrows() < 2 {
        return Err(Error::invalid(format!(
            "average reference needs >= 2 channels, got {}",
            eeg.nrows()
        )));
    }
    let mut out = eeg.clone();
    let n = eeg.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    Ok(out)
}
