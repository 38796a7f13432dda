//! EEG and kinematics preprocessing.
//!
//! EEG: band-pass 0.1-40 Hz (zero phase) → average reference → downsample.
//! Kinematics: 2 Hz zero-phase low-pass → min-max to [0, 1] → downsample.

pub mod convolve;
pub mod fir;
pub mod normalize;
pub mod reref;
pub mod resample;

use nalgebra::DMatrix;

pub use fir::{design_fir, filtfilt, filtfilt_rows, FilterBand, FirKernel};
pub use normalize::{minmax_normalize, zscore_normalize, NormStats};
pub use reref::average_rereference;
pub use resample::{decimation_factor, downsample, downsample_rows, rescale_index};

use crate::error::{Error, Result};
use crate::session::{Trial, TrialSet};

/// Applies the 2 Hz zero-phase low-pass to each kinematic axis.
pub fn smooth_kinematics(kin: &DMatrix<f64>, fs: f64) -> Result<DMatrix<f64>> {
    filtfilt_rows(kin, &fir::kinematics_lowpass(fs)?)
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub session: TrialSet,
    /// Min-max statistics of the smoothed kinematics.
    pub kinematics_stats: NormStats,
}

/// Runs every preprocessing stage on a session.
///
/// Min-max statistics are fitted on the trials listed in `fit_trials`
/// (typically the training split) or on all trials when `None`.
pub fn preprocess_trialset(
    ts: &TrialSet,
    fs_out: f64,
    fit_trials: Option<&[usize]>,
) -> Result<Preprocessed> {
    ts.validate()?;
    let factor = decimation_factor(ts.fs, fs_out)?;
    let bandpass = fir::eeg_bandpass(ts.fs)?;
    let lowpass = fir::kinematics_lowpass(ts.fs)?;
    log::info!(
        "{}: ICA ocular-artifact stage is a no-op for this pipeline",
        ts.participant_id
    );

    let with_trial = |i: usize| move |e: Error| Error::Trial { trial: i, detail: e.to_string() };

    let smoothed = ts
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| filtfilt_rows(&t.kinematics, &lowpass).map_err(with_trial(i)))
        .collect::<Result<Vec<_>>>()?;

    let fit_ids: Vec<usize> = match fit_trials {
        Some(ids) => ids.to_vec(),
        None => (0..ts.trials.len()).collect(),
    };
    if let Some(&bad) = fit_ids.iter().find(|&&i| i >= ts.trials.len()) {
        return Err(Error::invalid(format!("fit trial {bad} out of range")));
    }
    let fit_segments: Vec<&DMatrix<f64>> = fit_ids.iter().map(|&i| &smoothed[i]).collect();
    let fitted_on = match fit_trials {
        Some(_) => format!("{} selected trials", fit_ids.len()),
        None => format!("all {} trials", fit_ids.len()),
    };
    let kinematics_stats = NormStats::fit_minmax(&fit_segments, fitted_on)?;

    let mut trials = Vec::with_capacity(ts.trials.len());
    for (i, (t, kin)) in ts.trials.iter().zip(&smoothed).enumerate() {
        let eeg = filtfilt_rows(&t.eeg, &bandpass).map_err(with_trial(i))?;
        let eeg = average_rereference(&eeg).map_err(with_trial(i))?;
        let eeg = downsample_rows(&eeg, ts.fs, fs_out).map_err(with_trial(i))?;
        let kin = kinematics_stats.apply(kin)?;
        let kin = downsample_rows(&kin, ts.fs, fs_out).map_err(with_trial(i))?;
        let onset = rescale_index(t.onset_index, factor);
        let end = rescale_index(t.end_index, factor);
        trials.push(Trial::new(eeg, kin, onset, end).map_err(with_trial(i))?);
    }

    Ok(Preprocessed {
        session: TrialSet::new(ts.participant_id.clone(), fs_out, ts.channel_names.clone(), trials)?,
        kinematics_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_trajectory_is_unchanged() {
        let kin = DMatrix::from_fn(3, 1000, |a, _| a as f64 + 0.5);
        let out = smooth_kinematics(&kin, 100.0).unwrap();
        assert_eq!(out.shape(), (3, 1000));
        assert!((out - kin).amax() < 1e-10);
    }

    #[test]
    fn jitter_is_suppressed_by_40_db() {
        let n = 2000;
        let fs = 100.0;
        let ramp = |t: usize| t as f64 / n as f64;
        let jitter = |t: usize| 0.05 * (2.0 * PI * 20.0 * t as f64 / fs).sin();
        let kin = DMatrix::from_fn(3, n, |_, t| ramp(t) + jitter(t));
        let out = smooth_kinematics(&kin, fs).unwrap();
        // Measure residual jitter away from the edges.
        let (lo, hi) = (400, n - 400);
        let residual: f64 = (lo..hi).map(|t| (out[(0, t)] - ramp(t)).powi(2)).sum();
        let injected: f64 = (lo..hi).map(|t| jitter(t).powi(2)).sum();
        assert!(10.0 * (residual / injected).log10() <= -40.0);
    }

    #[test]
    fn session_pipeline_rescales_indices() {
        let fs = 500.0;
        let n = 5000;
        let eeg = DMatrix::from_fn(4, n, |c, t| ((c + 1) as f64 * t as f64 / fs * 2.0 * PI).sin());
        let kin = DMatrix::from_fn(3, n, |a, t| (a as f64 + 1.0) * (t as f64 / fs * 0.5).sin());
        let trial = Trial::new(eeg, kin, 2000, 3004).unwrap();
        let names = (0..4).map(|i| format!("E{i}")).collect();
        let ts = TrialSet::new("P", fs, names, vec![trial.clone(), trial]).unwrap();
        let out = preprocess_trialset(&ts, 100.0, Some(&[0])).unwrap();
        let t = &out.session.trials[0];
        assert_eq!(out.session.fs, 100.0);
        assert_eq!(t.n_samples(), 1000);
        assert_eq!((t.onset_index, t.end_index), (400, 600));
        for col in t.eeg.column_iter() {
            assert!(col.sum().abs() < 1e-9);
        }
        let (lo, hi) = (t.kinematics.min(), t.kinematics.max());
        assert!(lo >= -0.02 && hi <= 1.02, "{lo} {hi}");
    }
}
