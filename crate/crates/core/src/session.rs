//! Trial sessions: the in-memory model and the on-disk formats.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "PMSESSN\0"
//! version    u8       = 1
//! participant str     (u32 byte length + utf-8)
//! fs         f64
//! n_channels u32, then n_channels × str
//! n_trials   u32
//! per trial:
//!   channels u32, samples u64, onset u64, end u64
//!   eeg        channels × samples f64, row-major (one channel after another)
//!   kinematics 3 × samples f64, row-major (x, then y, then z)
//! ```
//!
//! The CSV directory format holds a `meta.toml` (`participant_id`, `fs`)
//! plus one `*.csv` per trial, read in file-name order. Each CSV has a header
//! row of channel names followed by `kin_x,kin_y,kin_z,event`; the `event`
//! column is `onset` on the movement-onset row, `end` on the last valid row,
//! and empty elsewhere. Quoted fields are not supported.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PMSESSN\0";
const VERSION: u8 = 1;

/// Number of kinematic axes (x, y, z hand position).
pub const KIN_AXES: usize = 3;

/// One grasp-and-lift trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// Channels × samples, microvolts.
    pub eeg: DMatrix<f64>,
    /// 3 × samples hand position.
    pub kinematics: DMatrix<f64>,
    /// Sample index of movement onset.
    pub onset_index: usize,
    /// Last valid sample (inclusive).
    pub end_index: usize,
}

impl Trial {
    pub fn new(
        eeg: DMatrix<f64>,
        kinematics: DMatrix<f64>,
        onset_index: usize,
        end_index: usize,
    ) -> Result<Self> {
        let trial = Trial {
            eeg,
            kinematics,
            onset_index,
            end_index,
        };
        trial.check().map_err(|detail| Error::Trial { trial: 0, detail })?;
        Ok(trial)
    }

    pub fn n_channels(&self) -> usize {
        self.eeg.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.eeg.ncols()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.kinematics.nrows() != KIN_AXES {
            return Err(format!(
                "kinematics has {} rows, expected {KIN_AXES}",
                self.kinematics.nrows()
            ));
        }
        if self.kinematics.ncols() != self.eeg.ncols() {
            return Err(format!(
                "eeg has {} samples but kinematics has {}",
                self.eeg.ncols(),
                self.kinematics.ncols()
            ));
        }
        if !(self.onset_index < self.end_index && self.end_index < self.n_samples()) {
            return Err(format!(
                "need onset < end < samples, got onset {} end {} samples {}",
                self.onset_index,
                self.end_index,
                self.n_samples()
            ));
        }
        Ok(())
    }
}

/// One participant's session.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub participant_id: String,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub trials: Vec<Trial>,
}

impl TrialSet {
    /// Builds a session, checking every trial against the shared header.
    pub fn new(
        participant_id: impl Into<String>,
        fs: f64,
        channel_names: Vec<String>,
        trials: Vec<Trial>,
    ) -> Result<Self> {
        let ts = TrialSet {
            participant_id: participant_id.into(),
            fs,
            channel_names,
            trials,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be > 0, got {}", self.fs)));
        }
        if self.channel_names.is_empty() {
            return Err(Error::invalid("session needs at least one channel"));
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.n_channels() != self.n_channels() {
                return Err(Error::Trial {
                    trial: i,
                    detail: format!(
                        "channel count mismatch: {} vs {} in session header",
                        t.n_channels(),
                        self.n_channels()
                    ),
                });
            }
            t.check().map_err(|detail| Error::Trial { trial: i, detail })?;
        }
        Ok(())
    }
}

/// Accepted on-disk session layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionFormat {
    Binary,
    CsvDir,
}

pub fn load_trialset(path: &Path, format: SessionFormat) -> Result<TrialSet> {
    match format {
        SessionFormat::Binary => {
            let f = File::open(path).map_err(|e| Error::file(path, e))?;
            read_trialset(&mut BufReader::new(f))
        }
        SessionFormat::CsvDir => load_csv_dir(path),
    }
}

/// Picks the format from the path: directories are CSV, files are binary.
pub fn load_trialset_auto(path: &Path) -> Result<TrialSet> {
    if path.is_dir() {
        load_trialset(path, SessionFormat::CsvDir)
    } else {
        load_trialset(path, SessionFormat::Binary)
    }
}

pub fn save_trialset(ts: &TrialSet, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    write_trialset(ts, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trialset<W: Write>(ts: &TrialSet, w: &mut W) -> Result<()> {
    if ts.trials.is_empty() {
        return Err(Error::invalid("refusing to write a session without trials"));
    }
    ts.validate()?;
    for (i, t) in ts.trials.iter().enumerate() {
        if t.eeg.iter().chain(t.kinematics.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Trial {
                trial: i,
                detail: "non-finite sample (NaN/inf are not stored)".into(),
            });
        }
    }

    w.write_all(MAGIC)?;
    write_u8(w, VERSION)?;
    write_str(w, &ts.participant_id)?;
    write_f64(w, ts.fs)?;
    write_u32(w, ts.n_channels() as u32)?;
    for name in &ts.channel_names {
        write_str(w, name)?;
    }
    write_u32(w, ts.trials.len() as u32)?;
    for t in &ts.trials {
        write_u32(w, t.n_channels() as u32)?;
        write_u64(w, t.n_samples() as u64)?;
        write_u64(w, t.onset_index as u64)?;
        write_u64(w, t.end_index as u64)?;
        write_f64s(w, &row_major(&t.eeg))?;
        write_f64s(w, &row_major(&t.kinematics))?;
    }
    Ok(())
}

pub fn read_trialset<R: Read>(r: &mut R) -> Result<TrialSet> {
    const WHAT: &str = "session header";
    expect_magic(r, MAGIC, WHAT)?;
    let version = read_u8(r, WHAT)?;
    if version != VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let participant_id = read_str(r, WHAT)?;
    let fs = read_f64(r, WHAT)?;
    let n_channels = read_u32(r, WHAT)? as usize;
    let channel_names = (0..n_channels)
        .map(|_| read_str(r, WHAT))
        .collect::<Result<Vec<_>>>()?;
    let n_trials = read_u32(r, WHAT)? as usize;

    let mut trials = Vec::with_capacity(n_trials.min(4096));
    for i in 0..n_trials {
        let what = "trial header";
        let trial_err = |detail: String| Error::Trial { trial: i, detail };
        let channels = read_u32(r, what)? as usize;
        let samples = read_u64(r, what)? as usize;
        let onset = read_u64(r, what)? as usize;
        let end = read_u64(r, what)? as usize;
        if channels != n_channels {
            return Err(trial_err(format!(
                "channel count mismatch: {channels} vs {n_channels} in session header"
            )));
        }
        if !(onset < end && end < samples) {
            return Err(trial_err(format!(
                "onset/end out of range: onset {onset} end {end} samples {samples}"
            )));
        }
        let eeg = read_f64s(r, channels * samples, "trial payload")?;
        let kin = read_f64s(r, KIN_AXES * samples, "trial payload")?;
        if eeg.iter().chain(kin.iter()).any(|v| !v.is_finite()) {
            return Err(trial_err("non-finite sample in payload".into()));
        }
        trials.push(Trial {
            eeg: DMatrix::from_row_slice(channels, samples, &eeg),
            kinematics: DMatrix::from_row_slice(KIN_AXES, samples, &kin),
            onset_index: onset,
            end_index: end,
        });
    }
    TrialSet::new(participant_id, fs, channel_names, trials)
}

#[derive(Debug, Deserialize)]
struct CsvMeta {
    participant_id: String,
    fs: f64,
}

fn load_csv_dir(dir: &Path) -> Result<TrialSet> {
    let meta_path = dir.join("meta.toml");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e))?;
    let meta: CsvMeta =
        toml::from_str(&meta_text).map_err(|e| Error::format("meta.toml", e.to_string()))?;

    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format("csv session", "directory has no *.csv trial files"));
    }

    let mut channel_names: Option<Vec<String>> = None;
    let mut trials = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let text = fs::read_to_string(file).map_err(|e| Error::file(file, e))?;
        let (names, trial) = parse_csv_trial(&text).map_err(|detail| Error::Trial { trial: i, detail })?;
        match &channel_names {
            None => channel_names = Some(names),
            Some(first) if first.len() != names.len() => {
                return Err(Error::Trial {
                    trial: i,
                    detail: format!(
                        "channel count mismatch: {} vs {} in first trial",
                        names.len(),
                        first.len()
                    ),
                })
            }
            Some(_) => {}
        }
        trials.push(trial);
    }
    TrialSet::new(
        meta.participant_id,
        meta.fs,
        channel_names.unwrap_or_default(),
        trials,
    )
}

fn parse_csv_trial(text: &str) -> std::result::Result<(Vec<String>, Trial), String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    let tail = ["kin_x", "kin_y", "kin_z", "event"];
    if header.len() < tail.len() + 1 || header[header.len() - 4..] != tail {
        return Err("header must be <channels...>,kin_x,kin_y,kin_z,event".into());
    }
    let n_ch = header.len() - tail.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n_ch + KIN_AXES];
    let (mut onset, mut end) = (None, None);
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("row {row}: {e}"))?;
        for (c, f) in record.iter().take(n_ch + KIN_AXES).enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| format!("row {row}: cannot parse {f:?} as a number"))?;
            cols[c].push(v);
        }
        match &record[n_ch + KIN_AXES] {
            "" => {}
            "onset" => onset = Some(row),
            "end" => end = Some(row),
            other => return Err(format!("row {row}: unknown event {other:?}")),
        }
    }
    if cols[0].is_empty() {
        return Err("no data rows".into());
    }
    let samples = cols[0].len();
    let onset = onset.ok_or("no onset event")?;
    let end = end.ok_or("no end event")?;
    let eeg = DMatrix::from_fn(n_ch, samples, |c, t| cols[c][t]);
    let kin = DMatrix::from_fn(KIN_AXES, samples, |a, t| cols[n_ch + a][t]);
    let trial = Trial {
        eeg,
        kinematics: kin,
        onset_index: onset,
        end_index: end,
    };
    trial.check()?;
    Ok((header[..n_ch].to_vec(), trial))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trial(ch: usize, n: usize, onset: usize, end: usize) -> Trial {
        Trial {
            eeg: DMatrix::from_fn(ch, n, |c, t| (c * 1000 + t) as f64 * 0.25 - 3.0),
            kinematics: DMatrix::from_fn(3, n, |a, t| (a as f64 + 1.0) * (t as f64).sin()),
            onset_index: onset,
            end_index: end,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("E{i}")).collect()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let ts = TrialSet::new("P01", 500.0, names(4), vec![tiny_trial(4, 20, 5, 18), tiny_trial(4, 9, 1, 8)])
            .unwrap();
        let mut buf = Vec::new();
        write_trialset(&ts, &mut buf).unwrap();
        let back = read_trialset(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn empty_session_is_not_written() {
        let ts = TrialSet::new("P01", 100.0, names(2), vec![]).unwrap();
        assert!(matches!(write_trialset(&ts, &mut Vec::new()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn nan_is_not_written() {
        let mut t = tiny_trial(2, 10, 2, 8);
        t.eeg[(1, 3)] = f64::NAN;
        let ts = TrialSet::new("P01", 100.0, names(2), vec![tiny_trial(2, 10, 2, 8), t]).unwrap();
        match write_trialset(&ts, &mut Vec::new()) {
            Err(Error::Trial { trial, .. }) => assert_eq!(trial, 1),
            other => panic!("expected trial error, got {other:?}"),
        }
    }

    #[test]
    fn onset_past_end_of_trial_is_reported_with_index() {
        let ts = TrialSet::new("P01", 100.0, names(2), vec![tiny_trial(2, 10, 2, 8), tiny_trial(2, 10, 2, 8)])
            .unwrap();
        let mut buf = Vec::new();
        write_trialset(&ts, &mut buf).unwrap();
        // Patch trial 1's onset header field to 10 (== sample count).
        let trial0 = 4 + 8 + 8 + 8 + 8 * (2 * 10 + 3 * 10);
        let header = 8 + 1 + (4 + 3) + 8 + 4 + 2 * (4 + 2) + 4;
        let onset_at = header + trial0 + 4 + 8;
        buf[onset_at..onset_at + 8].copy_from_slice(&10u64.to_le_bytes());
        match read_trialset(&mut buf.as_slice()) {
            Err(Error::Trial { trial, detail }) => {
                assert_eq!(trial, 1);
                assert!(detail.contains("onset"), "{detail}");
            }
            other => panic!("expected trial error, got {other:?}"),
        }
    }

    #[test]
    fn channel_mismatch_is_reported_with_index() {
        let ts = TrialSet {
            participant_id: "P".into(),
            fs: 500.0,
            channel_names: names(32),
            trials: vec![tiny_trial(32, 10, 2, 8), tiny_trial(31, 10, 2, 8)],
        };
        match ts.validate() {
            Err(Error::Trial { trial, detail }) => {
                assert_eq!(trial, 1);
                assert!(detail.contains("mismatch"));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let ts = TrialSet::new("P01", 100.0, names(2), vec![tiny_trial(2, 10, 2, 8)]).unwrap();
        let mut buf = Vec::new();
        write_trialset(&ts, &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_trialset(&mut buf.as_slice()), Err(Error::Format { .. })));
        assert!(matches!(read_trialset(&mut &b"NOTMAGIC"[..]), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_trial_parses_events() {
        let text = "C3,C4,kin_x,kin_y,kin_z,event\n\
                    1,2,0.1,0.2,0.3,\n\
                    3,4,0.1,0.2,0.3,onset\n\
                    5,6,0.1,0.2,0.3,\n\
                    7,8,0.4,0.5,0.6,end\n";
        let (names, t) = parse_csv_trial(text).unwrap();
        assert_eq!(names, vec!["C3", "C4"]);
        assert_eq!((t.onset_index, t.end_index, t.n_samples()), (1, 3, 4));
        assert_eq!(t.eeg[(1, 2)], 6.0);
        assert_eq!(t.kinematics[(2, 3)], 0.6);
    }
}
