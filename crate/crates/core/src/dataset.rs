//! Lag-window datasets: each target sample is paired with the N samples of
//! every input series that end `gap` samples before it.
//!
//! For a prediction index `p`, the input block covers columns
//! `p - g - N ..= p - g - 1`; at 100 Hz with a 150 ms window and 50 ms gap
//! the onset row uses times -200 ms … -60 ms. Rows are flattened
//! scout-major: all N lags of series 0, then series 1, and so on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::session::{TrialSet, KIN_AXES};
use crate::signal::NormStats;

/// Window lengths evaluated by default, ms.
pub const STANDARD_WINDOWS_MS: [u32; 4] = [150, 200, 250, 300];
/// Gap between the last input sample and the predicted sample, ms.
pub const DEFAULT_GAP_MS: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_ms: u32,
    pub gap_ms: u32,
    pub fs: f64,
}

impl WindowSpec {
    pub fn new(window_ms: u32, fs: f64) -> Result<Self> {
        Self::with_gap(window_ms, DEFAULT_GAP_MS, fs)
    }

    pub fn with_gap(window_ms: u32, gap_ms: u32, fs: f64) -> Result<Self> {
        let spec = WindowSpec { window_ms, gap_ms, fs };
        exact_samples(window_ms, fs)?;
        exact_samples(gap_ms, fs)?;
        if spec.lags() == 0 {
            return Err(Error::invalid("window must span at least one sample"));
        }
        Ok(spec)
    }

    /// N: samples per window.
    pub fn lags(&self) -> usize {
        (self.window_ms as f64 * self.fs / 1000.0).round() as usize
    }

    /// g: samples between window end and target.
    pub fn gap(&self) -> usize {
        (self.gap_ms as f64 * self.fs / 1000.0).round() as usize
    }

    /// Smallest admissible onset index.
    pub fn min_onset(&self) -> usize {
        self.lags() + self.gap()
    }
}

fn exact_samples(ms: u32, fs: f64) -> Result<()> {
    let s = ms as f64 * fs / 1000.0;
    if !(fs > 0.0) || (s - s.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!("{ms} ms is not a whole number of samples at {fs} Hz")));
    }
    Ok(())
}

/// Shape of one flattened input row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// M: input series (scouts or sensors).
    pub series: usize,
    /// N: lags per series.
    pub lags: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.series * self.lags
    }

    /// Row back to its M × N block.
    pub fn unflatten(&self, row: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.series, self.lags, row)
    }
}

/// Supervised rows with trial provenance; inputs and targets are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub trial_ids: Vec<usize>,
    pub layout: FeatureLayout,
}

impl WindowedDataset {
    pub fn empty(layout: FeatureLayout) -> Self {
        WindowedDataset {
            inputs: Vec::new(),
            targets: Vec::new(),
            trial_ids: Vec::new(),
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.trial_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trial_ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn input(&self, row: usize) -> &[f64] {
        let w = self.width();
        &self.inputs[row * w..(row + 1) * w]
    }

    pub fn target(&self, row: usize) -> &[f64] {
        &self.targets[row * KIN_AXES..(row + 1) * KIN_AXES]
    }

    pub fn inputs_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.width(), &self.inputs)
    }

    pub fn targets_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), KIN_AXES, &self.targets)
    }

    pub fn append(&mut self, other: &WindowedDataset) -> Result<()> {
        if other.layout != self.layout {
            return Err(Error::shape(format!(
                "cannot append layout {:?} to {:?}",
                other.layout, self.layout
            )));
        }
        self.inputs.extend_from_slice(&other.inputs);
        self.targets.extend_from_slice(&other.targets);
        self.trial_ids.extend_from_slice(&other.trial_ids);
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if self.inputs.len() != n * self.width() || self.targets.len() != n * KIN_AXES {
            return Err(Error::shape("dataset buffers disagree with row count"));
        }
        Ok(())
    }
}

/// Lag windows of one trial for every prediction index in `onset..=end`.
pub fn build_windows(
    series: &DMatrix<f64>,
    kin: &DMatrix<f64>,
    onset: usize,
    end: usize,
    spec: &WindowSpec,
    trial_id: usize,
) -> Result<WindowedDataset> {
    let (m, samples) = series.shape();
    if kin.shape() != (KIN_AXES, samples) {
        return Err(Error::shape(format!(
            "kinematics is {:?}, expected ({KIN_AXES}, {samples})",
            kin.shape()
        )));
    }
    if onset < spec.min_onset() {
        return Err(Error::Trial {
            trial: trial_id,
            detail: format!(
                "onset index {onset} leaves no room for a {} ms window plus {} ms gap (need >= {})",
                spec.window_ms,
                spec.gap_ms,
                spec.min_onset()
            ),
        });
    }
    if !(onset <= end && end < samples) {
        return Err(Error::Trial {
            trial: trial_id,
            detail: format!("need onset <= end < samples, got {onset}, {end}, {samples}"),
        });
    }
    let (n, g) = (spec.lags(), spec.gap());
    let layout = FeatureLayout { series: m, lags: n };
    let rows = end - onset + 1;
    let mut ds = WindowedDataset {
        inputs: Vec::with_capacity(rows * layout.width()),
        targets: Vec::with_capacity(rows * KIN_AXES),
        trial_ids: vec![trial_id; rows],
        layout,
    };
    for p in onset..=end {
        let first = p - g - n;
        for s in 0..m {
            ds.inputs.extend((first..first + n).map(|t| series[(s, t)]));
        }
        ds.targets.extend(kin.column(p).iter());
    }
    Ok(ds)
}

/// Concatenates the windows of the listed trials in the given order.
pub fn assemble_dataset(ts: &TrialSet, spec: &WindowSpec, ids: &[usize]) -> Result<WindowedDataset> {
    if (ts.fs - spec.fs).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "window spec is for {} Hz, session is {} Hz",
            spec.fs, ts.fs
        )));
    }
    let layout = FeatureLayout {
        series: ts.n_channels(),
        lags: spec.lags(),
    };
    let mut out = WindowedDataset::empty(layout);
    for &id in ids {
        let t = ts.trials.get(id).ok_or_else(|| Error::Trial {
            trial: id,
            detail: format!("no such trial (session has {})", ts.trials.len()),
        })?;
        out.append(&build_windows(&t.eeg, &t.kinematics, t.onset_index, t.end_index, spec, id)?)?;
    }
    Ok(out)
}

/// Z-scores every channel with mean/std fitted on the listed trials only.
pub fn standardize_channels(ts: &TrialSet, fit_trials: &[usize]) -> Result<(TrialSet, NormStats)> {
    let segments = fit_trials
        .iter()
        .map(|&i| {
            ts.trials.get(i).map(|t| &t.eeg).ok_or_else(|| Error::Trial {
                trial: i,
                detail: "no such trial".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = NormStats::fit_zscore(&segments, format!("{} training trials", fit_trials.len()))?;
    let mut out = ts.clone();
    for t in &mut out.trials {
        t.eeg = stats.apply(&t.eeg)?;
    }
    Ok((out, stats))
}

/// Trial counts for the train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    /// With fewer trials than requested, scale the split down instead of
    /// failing: val/test get `floor(n · share)`, train takes the rest.
    pub proportional_fallback: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_train: 234,
            n_val: 30,
            n_test: 30,
            seed: 0,
            proportional_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_trials(ts: &TrialSet, spec: &SplitSpec) -> Result<TrialSplit> {
    split_indices(ts.trials.len(), spec)
}

/// Uniform random disjoint split of `0..n`, each set sorted ascending.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<TrialSplit> {
    let total = spec.n_train + spec.n_val + spec.n_test;
    if total == 0 {
        return Err(Error::invalid("split requests no trials"));
    }
    let (n_train, n_val, n_test) = if n >= total {
        (spec.n_train, spec.n_val, spec.n_test)
    } else if spec.proportional_fallback {
        let val = n * spec.n_val / total;
        let test = n * spec.n_test / total;
        (n - val - test, val, test)
    } else {
        return Err(Error::invalid(format!(
            "split needs {total} trials, session has {n} (proportional fallback disabled)"
        )));
    };
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut take = |k: usize| {
        let mut v: Vec<usize> = ids.drain(..k).collect();
        v.sort_unstable();
        v
    };
    let train = take(n_train);
    let val = take(n_val);
    let test = take(n_test);
    Ok(TrialSplit { train, val, test })
}

/// Train/validation/test windows for one (session, window) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub spec: WindowSpec,
    /// "source" or "sensor".
    pub domain: String,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

const MAGIC: &[u8; 8] = b"PMWINDS\0";
const VERSION: u8 = 1;
const LAYOUT_SCOUT_MAJOR: u8 = 0;

impl DatasetBundle {
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
        w.write_all(MAGIC)?;
        write_u8(w, VERSION)?;
        write_u32(w, self.spec.window_ms)?;
        write_u32(w, self.spec.gap_ms)?;
        write_f64(w, self.spec.fs)?;
        write_str(w, &self.domain)?;
        for part in [&self.train, &self.val, &self.test] {
            part.check()?;
            write_u32(w, part.layout.series as u32)?;
            write_u32(w, part.layout.lags as u32)?;
            write_u8(w, LAYOUT_SCOUT_MAJOR)?;
            write_u64(w, part.len() as u64)?;
            write_f64s(w, &part.inputs)?;
            write_f64s(w, &part.targets)?;
            for &id in &part.trial_ids {
                write_u64(w, id as u64)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "dataset file";
        expect_magic(r, MAGIC, WHAT)?;
        let version = read_u8(r, WHAT)?;
        if version != VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let window_ms = read_u32(r, WHAT)?;
        let gap_ms = read_u32(r, WHAT)?;
        let fs = read_f64(r, WHAT)?;
        let spec = WindowSpec::with_gap(window_ms, gap_ms, fs)?;
        let domain = read_str(r, WHAT)?;
        let mut parts = Vec::with_capacity(3);
        for _ in 0..3 {
            let series = read_u32(r, WHAT)? as usize;
            let lags = read_u32(r, WHAT)? as usize;
            if read_u8(r, WHAT)? != LAYOUT_SCOUT_MAJOR {
                return Err(Error::format(WHAT, "unknown flattening order"));
            }
            let rows = read_u64(r, WHAT)? as usize;
            let layout = FeatureLayout { series, lags };
            let inputs = read_f64s(r, rows * layout.width(), WHAT)?;
            let targets = read_f64s(r, rows * KIN_AXES, WHAT)?;
            let trial_ids = (0..rows)
                .map(|_| read_u64(r, WHAT).map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            parts.push(WindowedDataset {
                inputs,
                targets,
                trial_ids,
                layout,
            });
        }
        let test = parts.pop().expect("three parts");
        let val = parts.pop().expect("three parts");
        let train = parts.pop().expect("three parts");
        Ok(DatasetBundle {
            spec,
            domain,
            train,
            val,
            test,
        })
    }
}
