//! Command-line front end for the decoding pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use premotor::dataset::{assemble_dataset, split_trials, standardize_channels, DatasetBundle, SplitSpec, WindowSpec, DEFAULT_GAP_MS};
use premotor::eval::{emit_report, pearson_cv, run_experiment, Domain, ExperimentConfig, ModelKind};
use premotor::nn::{build_decoder, mlr_fit, train, DecoderConfig, TrainConfig, TrainedModel, DEFAULT_RIDGE};
use premotor::session::{load_trialset_auto, save_trialset};
use premotor::signal::preprocess_trialset;
use premotor::source::{
    builtin_head_model, load_lead_field, save_lead_field, scout_trialset, Regularization, ScoutAtlas,
    DEFAULT_REGIONS, DEFAULT_SENSORS, DEFAULT_SOURCES,
};
use premotor::synth::{generate_synthetic_session, SynthConfig};

#[derive(Parser)]
#[command(name = "premotor", version, about = "Decode hand kinematics from pre-movement EEG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in spherical lead field and its scout atlas.
    Headmodel {
        #[arg(long)]
        leadfield: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SENSORS)]
        sensors: usize,
        #[arg(long, default_value_t = DEFAULT_SOURCES)]
        sources: usize,
        #[arg(long, default_value_t = DEFAULT_REGIONS)]
        regions: usize,
    },
    /// Generate a synthetic grasp-and-lift session.
    Synth {
        /// Generator settings (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        leadfield: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, re-reference, normalize and downsample a raw session.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        fs_out: f64,
    },
    /// Project a preprocessed session to scout time series.
    Inverse {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        leadfield: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        /// "auto" or a non-negative number.
        #[arg(long, default_value = "auto")]
        alpha: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split trials and build lagged train/val/test windows.
    Windows {
        /// Preprocessed sensor session or scout session.
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = 300)]
        window_ms: u32,
        #[arg(long, default_value_t = DEFAULT_GAP_MS)]
        gap_ms: u32,
        #[arg(long, default_value_t = Domain::Source)]
        domain: Domain,
        /// Split seed.
        #[arg(long, default_value_t = 0)]
        split: u64,
        /// Scale the 234/30/30 split down for small sessions.
        #[arg(long)]
        proportional: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decoder on a dataset file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Model settings (TOML); CNN-LSTM defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict kinematics for one part of a dataset file and print its CV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        part: String,
        /// CSV of predictions next to targets.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment sweep and write CSV/TXT/SVG reports.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Settings for `train`.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFileConfig {
    model: ModelKind,
    ridge: f64,
    decoder: DecoderConfig,
    train: TrainConfig,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            model: ModelKind::CnnLstm,
            ridge: DEFAULT_RIDGE,
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Headmodel { leadfield, atlas, sensors, sources, regions } => {
            let (lf, at) = builtin_head_model(sensors, sources, regions)?;
            save_lead_field(&lf, &leadfield)?;
            at.save(&atlas)?;
            log::info!("{sensors} sensors, {sources} sources, {regions} regions");
        }
        Command::Synth { config, leadfield, atlas, out } => {
            let cfg: SynthConfig = read_toml(config.as_deref())?;
            let lf = load_lead_field(&leadfield)?;
            let at = ScoutAtlas::load(&atlas)?;
            let (ts, truth) = generate_synthetic_session(&cfg, &lf, &at)?;
            save_trialset(&ts, &out)?;
            log::info!(
                "{}: {} trials at {} Hz, active scouts {:?}",
                ts.participant_id,
                ts.trials.len(),
                ts.fs,
                truth.active_scouts
            );
        }
        Command::Preprocess { input, out, fs_out } => {
            let ts = load_trialset_auto(&input)?;
            let pre = preprocess_trialset(&ts, fs_out, None)?;
            save_trialset(&pre.session, &out)?;
        }
        Command::Inverse { session, leadfield, atlas, alpha, out } => {
            let reg: Regularization = alpha.parse()?;
            let ts = load_trialset_auto(&session)?;
            let scouts = scout_trialset(&ts, &load_lead_field(&leadfield)?, &ScoutAtlas::load(&atlas)?, reg)?;
            save_trialset(&scouts, &out)?;
        }
        Command::Windows { session, window_ms, gap_ms, domain, split, proportional, out } => {
            let ts = load_trialset_auto(&session)?;
            let spec = WindowSpec::with_gap(window_ms, gap_ms, ts.fs)?;
            let parts = split_trials(
                &ts,
                &SplitSpec {
                    seed: split,
                    proportional_fallback: proportional,
                    ..SplitSpec::default()
                },
            )?;
            let (z, _) = standardize_channels(&ts, &parts.train)?;
            let bundle = DatasetBundle {
                spec,
                domain: domain.to_string(),
                train: assemble_dataset(&z, &spec, &parts.train)?,
                val: assemble_dataset(&z, &spec, &parts.val)?,
                test: assemble_dataset(&z, &spec, &parts.test)?,
            };
            log::info!(
                "{} x {} features; {}/{}/{} rows",
                bundle.train.layout.series,
                bundle.train.layout.lags,
                bundle.train.len(),
                bundle.val.len(),
                bundle.test.len()
            );
            bundle.save(&out)?;
        }
        Command::Train { dataset, config, out } => {
            let cfg: TrainFileConfig = read_toml(config.as_deref())?;
            let data = DatasetBundle::load(&dataset)?;
            let mut model = match cfg.model {
                ModelKind::Mlr => TrainedModel::Mlr(mlr_fit(&data.train.inputs, &data.train.targets, data.train.width(), cfg.ridge)?),
                ModelKind::CnnLstm => {
                    let mut net = build_decoder(data.train.layout.series, data.train.layout.lags, &cfg.decoder)?;
                    let report = train(&mut net, &data.train, &data.val, &cfg.train)?;
                    log::info!(
                        "best epoch {} of {}, val mse {:.5}, {:.1?}",
                        report.best_epoch,
                        report.stopped_epoch,
                        report.val_loss[report.best_epoch - 1],
                        report.wall_time
                    );
                    TrainedModel::CnnLstm(net)
                }
            };
            model.save(&out)?;
        }
        Command::Predict { model, dataset, part, out } => {
            let mut m = TrainedModel::load(&model)?;
            let data = DatasetBundle::load(&dataset)?;
            let set = match part.as_str() {
                "train" => &data.train,
                "val" => &data.val,
                "test" => &data.test,
                other => bail!("unknown part {other:?}; use train, val or test"),
            };
            if set.is_empty() {
                bail!("the {part} part of {} has no rows", dataset.display());
            }
            let pred = m.predict(&set.inputs)?;
            let mut text = String::from("trial,pred_x,pred_y,pred_z,true_x,true_y,true_z\n");
            for r in 0..set.len() {
                let (p, t) = (&pred[r * 3..r * 3 + 3], set.target(r));
                text.push_str(&format!("{},{},{},{},{},{},{}\n", set.trial_ids[r], p[0], p[1], p[2], t[0], t[1], t[2]));
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            let cv = pearson_cv(&set.targets, &pred)?;
            println!("CV x {:.4}  y {:.4}  z {:.4}  ({} rows)", cv[0], cv[1], cv[2], set.len());
        }
        Command::Report { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let table = run_experiment(&cfg)?;
            fs::create_dir_all(&out)?;
            for f in emit_report(&table, &out)? {
                log::info!("wrote {}", f.display());
            }
            print!("{}", premotor::eval::report::text_table(&table));
            if !table.failures.is_empty() {
                log::warn!("{} cells failed; see cv_results.csv", table.failures.len());
            }
        }
    }
    Ok(())
}
