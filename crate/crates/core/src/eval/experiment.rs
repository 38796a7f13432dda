//! Experiment runner: every (participant, domain, window, model) cell
//! through preprocessing, optional source imaging, windowing, training and
//! scoring.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::pearson_cv;
use super::report::{AxisStats, CellFailure, CvResult, Domain, ModelKind, ReportTable};
use crate::dataset::{assemble_dataset, split_trials, standardize_channels, SplitSpec, TrialSplit, WindowSpec, WindowedDataset, DEFAULT_GAP_MS, STANDARD_WINDOWS_MS};
use crate::error::{Error, Result};
use crate::nn::{build_decoder, mlr_fit, train, DecoderConfig, TrainConfig, DEFAULT_RIDGE};
use crate::session::{load_trialset, load_trialset_auto, SessionFormat, TrialSet, KIN_AXES};
use crate::signal::preprocess_trialset;
use crate::source::{builtin_head_model, load_lead_field, scout_trialset, LeadField, Regularization, ScoutAtlas, DEFAULT_REGIONS, DEFAULT_SENSORS, DEFAULT_SOURCES};
use crate::synth::{generate_synthetic_session, SynthConfig};

/// One participant: a session file or an inline synthetic generator config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub path: Option<PathBuf>,
    /// "binary" or "csv"; inferred from the path when absent.
    pub format: Option<String>,
    pub synthetic: Option<SynthConfig>,
}

/// Lead field and atlas files; the built-in spherical model when absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadModelSpec {
    pub lead_field: Option<PathBuf>,
    pub atlas: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sessions: Vec<SessionSpec>,
    pub windows_ms: Vec<u32>,
    pub gap_ms: u32,
    pub domains: Vec<Domain>,
    pub models: Vec<ModelKind>,
    pub target_fs: f64,
    pub head_model: HeadModelSpec,
    /// sLORETA regularization: "auto" or a number.
    pub alpha: String,
    pub ridge: f64,
    pub split: SplitSpec,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sessions: Vec::new(),
            windows_ms: STANDARD_WINDOWS_MS.to_vec(),
            gap_ms: DEFAULT_GAP_MS,
            domains: vec![Domain::Source, Domain::Sensor],
            models: vec![ModelKind::CnnLstm],
            target_fs: 100.0,
            head_model: HeadModelSpec::default(),
            alpha: "auto".into(),
            ridge: DEFAULT_RIDGE,
            split: SplitSpec::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        for s in &mut cfg.sessions {
            resolve(&mut s.path);
        }
        resolve(&mut cfg.head_model.lead_field);
        resolve(&mut cfg.head_model.atlas);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sessions.is_empty() {
            return bad("no sessions configured".into());
        }
        for (i, s) in self.sessions.iter().enumerate() {
            if s.path.is_some() == s.synthetic.is_some() {
                return bad(format!("session {i}: give exactly one of `path` or `synthetic`"));
            }
        }
        if self.windows_ms.is_empty() || self.domains.is_empty() || self.models.is_empty() {
            return bad("windows_ms, domains and models must be non-empty".into());
        }
        for &w in &self.windows_ms {
            WindowSpec::with_gap(w, self.gap_ms, self.target_fs).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.head_model.lead_field.is_some() != self.head_model.atlas.is_some() {
            return bad("head_model needs both lead_field and atlas, or neither".into());
        }
        self.regularization()?;
        self.decoder.validate()?;
        self.train.validate()
    }

    pub fn regularization(&self) -> Result<Regularization> {
        self.alpha.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn head_model(&self) -> Result<(LeadField, ScoutAtlas)> {
        match (&self.head_model.lead_field, &self.head_model.atlas) {
            (Some(lf), Some(atlas)) => Ok((load_lead_field(lf)?, ScoutAtlas::load(atlas)?)),
            _ => builtin_head_model(DEFAULT_SENSORS, DEFAULT_SOURCES, DEFAULT_REGIONS),
        }
    }
}

pub fn load_session(spec: &SessionSpec, lf: &LeadField, atlas: &ScoutAtlas) -> Result<TrialSet> {
    match (&spec.path, &spec.synthetic) {
        (Some(path), _) => match spec.format.as_deref() {
            None => load_trialset_auto(path),
            Some("binary") => load_trialset(path, SessionFormat::Binary),
            Some("csv") => load_trialset(path, SessionFormat::CsvDir),
            Some(other) => Err(Error::Config(format!("unknown session format {other:?}"))),
        },
        (None, Some(cfg)) => generate_synthetic_session(cfg, lf, atlas).map(|(ts, _)| ts),
        (None, None) => Err(Error::Config("session has neither path nor synthetic config".into())),
    }
}

/// A participant's session after preprocessing, ready to window.
pub struct PreparedParticipant {
    pub split: TrialSplit,
    /// Z-scored (train-fitted) series per requested domain.
    pub domains: Vec<(Domain, Result<TrialSet>)>,
}

/// Split, preprocess (train-fitted kinematics scaling) and build the
/// z-scored series for each domain.
pub fn prepare_participant(
    raw: &TrialSet,
    cfg: &ExperimentConfig,
    lf: &LeadField,
    atlas: &ScoutAtlas,
) -> Result<PreparedParticipant> {
    let split = split_trials(raw, &cfg.split)?;
    let pre = preprocess_trialset(raw, cfg.target_fs, Some(&split.train))?;
    let reg = cfg.regularization()?;
    let domains = cfg
        .domains
        .iter()
        .map(|&d| {
            let series = match d {
                Domain::Sensor => Ok(pre.session.clone()),
                Domain::Source => scout_trialset(&pre.session, lf, atlas, reg),
            };
            (d, series.and_then(|s| standardize_channels(&s, &split.train).map(|(z, _)| z)))
        })
        .collect();
    Ok(PreparedParticipant { split, domains })
}

/// Train/val/test windows of one cell.
pub fn cell_datasets(
    series: &TrialSet,
    split: &TrialSplit,
    spec: &WindowSpec,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    Ok((
        assemble_dataset(series, spec, &split.train)?,
        assemble_dataset(series, spec, &split.val)?,
        assemble_dataset(series, spec, &split.test)?,
    ))
}

/// Fits one model and returns (test predictions, epochs run).
pub fn fit_and_predict(
    model: ModelKind,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    test_set: &WindowedDataset,
    cfg: &ExperimentConfig,
) -> Result<(Vec<f64>, usize)> {
    match model {
        ModelKind::Mlr => {
            let m = mlr_fit(&train_set.inputs, &train_set.targets, train_set.width(), cfg.ridge)?;
            Ok((m.predict(&test_set.inputs)?, 0))
        }
        ModelKind::CnnLstm => {
            let layout = train_set.layout;
            let mut net = build_decoder(layout.series, layout.lags, &cfg.decoder)?;
            let report = train(&mut net, train_set, val_set, &cfg.train)?;
            log::info!(
                "cnn-lstm: best epoch {} of {} (val mse {:.5}) in {:.1?}",
                report.best_epoch,
                report.stopped_epoch,
                report.val_loss[report.best_epoch - 1],
                report.wall_time
            );
            Ok((net.predict(&test_set.inputs, 256)?, report.stopped_epoch))
        }
    }
}

/// Pooled and mean-per-trial CVs of test predictions.
pub fn score(test_set: &WindowedDataset, pred: &[f64]) -> Result<([f64; 3], [f64; 3], usize)> {
    let pooled = pearson_cv(&test_set.targets, pred)?;
    let mut per_trial: Vec<[f64; 3]> = Vec::new();
    let mut start = 0;
    while start < test_set.len() {
        let id = test_set.trial_ids[start];
        let end = (start..test_set.len()).find(|&r| test_set.trial_ids[r] != id).unwrap_or(test_set.len());
        let span = start * KIN_AXES..end * KIN_AXES;
        if end - start >= 2 {
            per_trial.push(pearson_cv(&test_set.targets[span.clone()], &pred[span])?);
        }
        start = end;
    }
    let trial_cv = [0, 1, 2].map(|a| AxisStats::of(per_trial.iter().map(|c| c[a])).mean);
    Ok((pooled, trial_cv, per_trial.len()))
}

/// Runs every configured cell. A failing stage marks the affected cells as
/// failed and the rest carry on.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportTable> {
    cfg.validate()?;
    let (lf, atlas) = cfg.head_model()?;
    let mut table = ReportTable {
        windows_ms: cfg.windows_ms.clone(),
        ..ReportTable::default()
    };
    for (si, spec) in cfg.sessions.iter().enumerate() {
        let fallback_id = spec
            .synthetic
            .as_ref()
            .map(|s| s.participant_id.clone())
            .unwrap_or_else(|| format!("session{si}"));
        let prepared = load_session(spec, &lf, &atlas)
            .and_then(|raw| prepare_participant(&raw, cfg, &lf, &atlas).map(|p| (raw.participant_id, p)));
        let (pid, prepared) = match prepared {
            Ok(v) => v,
            Err(e) => {
                log::error!("{fallback_id}: {e}");
                for &d in &cfg.domains {
                    fail_cells(&mut table, cfg, &fallback_id, d, &cfg.windows_ms, &e);
                }
                continue;
            }
        };
        for (domain, series) in &prepared.domains {
            let series = match series {
                Ok(s) => s,
                Err(e) => {
                    log::error!("{pid}/{domain}: {e}");
                    fail_cells(&mut table, cfg, &pid, *domain, &cfg.windows_ms, e);
                    continue;
                }
            };
            for &window_ms in &cfg.windows_ms {
                let datasets = WindowSpec::with_gap(window_ms, cfg.gap_ms, cfg.target_fs)
                    .and_then(|spec| cell_datasets(series, &prepared.split, &spec));
                let (train_set, val_set, test_set) = match datasets {
                    Ok(d) => d,
                    Err(e) => {
                        fail_cells(&mut table, cfg, &pid, *domain, &[window_ms], &e);
                        continue;
                    }
                };
                for &model in &cfg.models {
                    log::info!("{pid}/{domain}/{window_ms} ms/{model}: {} train rows", train_set.len());
                    let outcome = fit_and_predict(model, &train_set, &val_set, &test_set, cfg)
                        .and_then(|(pred, epochs)| score(&test_set, &pred).map(|s| (s, epochs)));
                    match outcome {
                        Ok(((cv, trial_cv, test_trials), epochs)) => table.rows.push(CvResult {
                            participant_id: pid.clone(),
                            domain: *domain,
                            window_ms,
                            model,
                            cv,
                            trial_cv,
                            test_rows: test_set.len(),
                            test_trials,
                            epochs,
                        }),
                        Err(e) => {
                            log::error!("{pid}/{domain}/{window_ms} ms/{model}: {e}");
                            table.failures.push(CellFailure {
                                participant_id: pid.clone(),
                                domain: *domain,
                                window_ms,
                                model,
                                error: e.to_string(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(table)
}

fn fail_cells(table: &mut ReportTable, cfg: &ExperimentConfig, pid: &str, domain: Domain, windows: &[u32], e: &Error) {
    for &window_ms in windows {
        for &model in &cfg.models {
            table.failures.push(CellFailure {
                participant_id: pid.to_string(),
                domain,
                window_ms,
                model,
                error: e.to_string(),
            });
        }
    }
}
