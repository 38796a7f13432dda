//! Synthetic grasp-and-lift sessions with known source activity.
//!
//! A few atlas regions carry band-limited (0.5-4 Hz) activity under a
//! raised-cosine envelope that opens 300 ms before movement onset. Hand
//! position is a fixed linear map of that activity, delayed by the coupling
//! lag, plus a minimum-jerk reach after onset. EEG is the lead-field
//! projection of the activity plus white sensor noise at the requested SNR.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{Trial, TrialSet, KIN_AXES};
use crate::source::{default_channel_names, LeadField, ScoutAtlas};

/// Lead time of the activity envelope before movement onset, seconds.
pub const BURST_LEAD_S: f64 = 0.3;
const BAND_HZ: (f64, f64) = (0.5, 4.0);
const N_COMPONENTS: usize = 16;
const REACH_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub participant_id: String,
    pub n_trials: usize,
    /// 100 or 500 Hz.
    pub fs: f64,
    pub trial_duration_s: f64,
    /// Movement onset, seconds from trial start.
    pub onset_s: f64,
    /// Decoded segment length after onset; the trial's `end_index` sits here.
    pub movement_s: f64,
    /// Per-channel signal-to-noise ratio; `inf` disables noise.
    pub snr_db: f64,
    pub n_active_scouts: usize,
    pub coupling_lag_ms: f64,
    /// Peak dipole moment of active sources, nA·m.
    pub source_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            participant_id: "SYN01".into(),
            n_trials: 60,
            fs: 500.0,
            trial_duration_s: 10.0,
            onset_s: 4.0,
            movement_s: 2.0,
            snr_db: 10.0,
            n_active_scouts: 2,
            coupling_lag_ms: 100.0,
            source_amplitude: 20.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_trials == 0 {
            return bad("n_trials must be >= 1".into());
        }
        if self.fs != 100.0 && self.fs != 500.0 {
            return bad(format!("fs must be 100 or 500 Hz, got {}", self.fs));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("snr_db must be finite or +inf, got {}", self.snr_db));
        }
        if !(self.coupling_lag_ms > 0.0 && self.coupling_lag_ms.is_finite()) {
            return bad(format!("coupling_lag_ms must be > 0, got {}", self.coupling_lag_ms));
        }
        if self.coupling_lag_ms / 1000.0 >= self.onset_s {
            return bad(format!(
                "coupling lag {} ms exceeds the {} s before onset",
                self.coupling_lag_ms, self.onset_s
            ));
        }
        if self.n_active_scouts == 0 {
            return bad("n_active_scouts must be >= 1".into());
        }
        if !(self.source_amplitude > 0.0 && self.source_amplitude.is_finite()) {
            return bad("source_amplitude must be > 0".into());
        }
        if !(self.onset_s > 0.0 && self.movement_s > 0.0) {
            return bad("onset_s and movement_s must be > 0".into());
        }
        if self.onset_s + self.movement_s >= self.trial_duration_s {
            return bad(format!(
                "onset {} s + movement {} s does not fit in a {} s trial",
                self.onset_s, self.movement_s, self.trial_duration_s
            ));
        }
        Ok(())
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds * self.fs).round() as usize
    }
}

/// Everything the generator knows about how the data were made.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Atlas region indices carrying activity.
    pub active_scouts: Vec<usize>,
    /// 3 × n_active map from (unit-amplitude) activity to hand position.
    pub coupling: DMatrix<f64>,
    pub coupling_lag_samples: usize,
    /// Per trial, n_active × samples activity of each active region, nA·m.
    /// Every member source of a region carries its region's row.
    pub scout_activations: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    /// Full K × samples source matrix of one trial.
    pub fn source_activity(&self, trial: usize, atlas: &ScoutAtlas, n_sources: usize) -> DMatrix<f64> {
        let act = &self.scout_activations[trial];
        let mut s = DMatrix::zeros(n_sources, act.ncols());
        for (j, &region) in self.active_scouts.iter().enumerate() {
            for &src in &atlas.members()[region] {
                s.row_mut(src).copy_from(&act.row(j));
            }
        }
        s
    }
}

pub fn generate_synthetic_session(
    cfg: &SynthConfig,
    lead_field: &LeadField,
    atlas: &ScoutAtlas,
) -> Result<(TrialSet, GroundTruth)> {
    cfg.validate()?;
    if let Some(max) = atlas.max_index().filter(|&m| m >= lead_field.n_sources()) {
        return Err(Error::shape(format!(
            "atlas references source {max}, lead field has {} sources",
            lead_field.n_sources()
        )));
    }
    if cfg.n_active_scouts > atlas.n_regions() {
        return Err(Error::Config(format!(
            "{} active scouts requested, atlas has {} regions",
            cfg.n_active_scouts,
            atlas.n_regions()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_active = cfg.n_active_scouts;
    let mut active_scouts: Vec<usize> = sample(&mut rng, atlas.n_regions(), n_active).into_vec();
    active_scouts.sort_unstable();
    let coupling = DMatrix::from_fn(KIN_AXES, n_active, |_, _| rng.sample::<f64, _>(StandardNormal));
    let reach_dir = {
        let v = DVector::from_fn(KIN_AXES, |_, _| rng.sample::<f64, _>(StandardNormal));
        v.normalize() * REACH_SCALE
    };

    // Summed gain of each active region's member sources.
    let gains: Vec<DVector<f64>> = active_scouts
        .iter()
        .map(|&r| {
            atlas.members()[r]
                .iter()
                .fold(DVector::zeros(lead_field.n_sensors()), |acc, &k| {
                    acc + lead_field.gain().column(k)
                })
        })
        .collect();

    let n = cfg.samples(cfg.trial_duration_s);
    let onset = cfg.samples(cfg.onset_s);
    let end = onset + cfg.samples(cfg.movement_s);
    let lag = cfg.samples(cfg.coupling_lag_ms / 1000.0);
    let env = envelope(n, onset, end, cfg.samples(BURST_LEAD_S));

    let mut trials = Vec::with_capacity(cfg.n_trials);
    let mut scout_activations = Vec::with_capacity(cfg.n_trials);
    for _ in 0..cfg.n_trials {
        let mut act = DMatrix::zeros(n_active, n);
        for j in 0..n_active {
            let burst = band_limited(&mut rng, n, cfg.fs);
            for t in 0..n {
                act[(j, t)] = cfg.source_amplitude * env[t] * burst[t];
            }
        }

        let reach_gain = rng.random_range(0.5..1.5);
        let mut kin = DMatrix::zeros(KIN_AXES, n);
        for t in 0..n {
            let tau = ((t as f64 - onset as f64) / (end - onset) as f64).clamp(0.0, 1.0);
            let min_jerk = tau.powi(3) * (10.0 - 15.0 * tau + 6.0 * tau * tau);
            for a in 0..KIN_AXES {
                let mut v = reach_gain * min_jerk * reach_dir[a];
                if t >= lag {
                    for j in 0..n_active {
                        v += coupling[(a, j)] * act[(j, t - lag)] / cfg.source_amplitude;
                    }
                }
                kin[(a, t)] = v;
            }
        }

        let mut eeg = DMatrix::zeros(lead_field.n_sensors(), n);
        for (j, g) in gains.iter().enumerate() {
            eeg.ger(1.0, g, &act.row(j).transpose(), 1.0);
        }
        if cfg.snr_db.is_finite() {
            let ratio = 10f64.powf(cfg.snr_db / 10.0);
            for c in 0..eeg.nrows() {
                let power = eeg.row(c).iter().map(|v| v * v).sum::<f64>() / n as f64;
                let sigma = (power / ratio).sqrt();
                for t in 0..n {
                    eeg[(c, t)] += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }

        trials.push(Trial::new(eeg, kin, onset, end)?);
        scout_activations.push(act);
    }

    let ts = TrialSet::new(
        cfg.participant_id.clone(),
        cfg.fs,
        default_channel_names(lead_field.n_sensors()),
        trials,
    )?;
    let truth = GroundTruth {
        active_scouts,
        coupling,
        coupling_lag_samples: lag,
        scout_activations,
    };
    Ok((ts, truth))
}

/// Raised-cosine ramps: up over `ramp` samples ending at onset, flat to
/// `end`, down over `ramp` samples after it.
fn envelope(n: usize, onset: usize, end: usize, ramp: usize) -> Vec<f64> {
    let start = onset.saturating_sub(ramp);
    (0..n)
        .map(|t| {
            if t < start || t > end + ramp {
                0.0
            } else if t < onset {
                0.5 - 0.5 * (PI * (t - start) as f64 / ramp as f64).cos()
            } else if t <= end {
                1.0
            } else {
                0.5 + 0.5 * (PI * (t - end) as f64 / ramp as f64).cos()
            }
        })
        .collect()
}

/// Unit-RMS sum of random sinusoids in the 0.5-4 Hz band with 1/f amplitudes.
fn band_limited(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..N_COMPONENTS)
        .map(|_| {
            let f = rng.random_range(BAND_HZ.0..BAND_HZ.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            (f, 1.0 / f, phase)
        })
        .collect();
    let x: Vec<f64> = (0..n)
        .map(|t| {
            let time = t as f64 / fs;
            comps.iter().map(|(f, a, p)| a * (2.0 * PI * f * time + p).sin()).sum()
        })
        .collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    x.into_iter().map(|v| v / rms).collect()
}
