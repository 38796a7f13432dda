//! Result tables and their CSV / text / SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Sensor,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Sensor => "sensor",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "sensor" => Ok(Domain::Sensor),
            _ => Err(Error::invalid(format!("domain must be 'source' or 'sensor', got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "cnn-lstm")]
    CnnLstm,
    #[serde(rename = "mlr")]
    Mlr,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::CnnLstm => "cnn-lstm",
            ModelKind::Mlr => "mlr",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-lstm" => Ok(ModelKind::CnnLstm),
            "mlr" => Ok(ModelKind::Mlr),
            _ => Err(Error::invalid(format!("model must be 'cnn-lstm' or 'mlr', got {s:?}"))),
        }
    }
}

/// Test-set correlations of one (participant, domain, window, model) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub participant_id: String,
    pub domain: Domain,
    pub window_ms: u32,
    pub model: ModelKind,
    /// Pooled over all test windows of the participant.
    pub cv: [f64; 3],
    /// Mean of per-test-trial CVs (NaN trials excluded).
    pub trial_cv: [f64; 3],
    pub test_rows: usize,
    pub test_trials: usize,
    /// Epochs run (0 for closed-form models).
    pub epochs: usize,
}

/// A cell that could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub participant_id: String,
    pub domain: Domain,
    pub window_ms: u32,
    pub model: ModelKind,
    pub error: String,
}

/// Mean and population std of one axis across participants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStats {
    pub mean: f64,
    pub std: f64,
    /// Participants contributing (NaN CVs are excluded).
    pub n: usize,
}

impl AxisStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return AxisStats {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        AxisStats {
            mean,
            std: var.sqrt(),
            n: v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub domain: Domain,
    pub window_ms: u32,
    pub cv: [AxisStats; 3],
    pub trial_cv: [AxisStats; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<CvResult>,
    pub failures: Vec<CellFailure>,
    /// Window order for rendering; rows may cover a subset.
    pub windows_ms: Vec<u32>,
}

impl ReportTable {
    /// Mean ± population std per (model, domain, window), in first-seen order.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(ModelKind, Domain, u32)> = Vec::new();
        for r in &self.rows {
            let k = (r.model, r.domain, r.window_ms);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(model, domain, window_ms)| {
                let group: Vec<&CvResult> = self
                    .rows
                    .iter()
                    .filter(|r| (r.model, r.domain, r.window_ms) == (model, domain, window_ms))
                    .collect();
                let stats = |f: &dyn Fn(&CvResult) -> f64| {
                    let s = AxisStats::of(group.iter().map(|r| f(r)));
                    if s.n < group.len() {
                        log::warn!(
                            "{model}/{domain}/{window_ms} ms: {} NaN CVs excluded from aggregate",
                            group.len() - s.n
                        );
                    }
                    s
                };
                AggregateRow {
                    model,
                    domain,
                    window_ms,
                    cv: [0, 1, 2].map(|a| stats(&|r| r.cv[a])),
                    trial_cv: [0, 1, 2].map(|a| stats(&|r| r.trial_cv[a])),
                }
            })
            .collect()
    }

    fn models(&self) -> Vec<ModelKind> {
        let mut m: Vec<ModelKind> = self.rows.iter().map(|r| r.model).collect();
        m.sort();
        m.dedup();
        m
    }

    fn domains(&self) -> Vec<Domain> {
        let mut d: Vec<Domain> = self.rows.iter().map(|r| r.domain).collect();
        d.sort();
        d.dedup();
        d
    }

    fn participants(&self) -> Vec<String> {
        let mut p: Vec<String> = Vec::new();
        for r in &self.rows {
            if !p.contains(&r.participant_id) {
                p.push(r.participant_id.clone());
            }
        }
        p
    }

    fn windows(&self) -> Vec<u32> {
        let mut w = self.windows_ms.clone();
        for r in &self.rows {
            if !w.contains(&r.window_ms) {
                w.push(r.window_ms);
            }
        }
        w
    }
}

pub const CSV_HEADER: [&str; 13] = [
    "participant_id",
    "model",
    "domain",
    "window_ms",
    "cv_x",
    "cv_y",
    "cv_z",
    "trial_cv_x",
    "trial_cv_y",
    "trial_cv_z",
    "test_rows",
    "test_trials",
    "epochs",
];

/// Rows as CSV; floats use Rust's shortest round-trip formatting.
pub fn results_csv(rt: &ReportTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &rt.rows {
        let mut rec = vec![
            r.participant_id.clone(),
            r.model.to_string(),
            r.domain.to_string(),
            r.window_ms.to_string(),
        ];
        rec.extend(r.cv.iter().chain(&r.trial_cv).map(|v| v.to_string()));
        rec.extend([r.test_rows, r.test_trials, r.epochs].map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Parses [`results_csv`] output back into rows.
pub fn parse_results_csv(text: &str) -> Result<Vec<CvResult>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).ok_or_else(|| Error::format("results csv", "short record"));
        let num = |i: usize| -> Result<f64> {
            f(i)?.parse().map_err(|_| Error::format("results csv", format!("bad number in column {i}")))
        };
        let int = |i: usize| -> Result<usize> {
            f(i)?.parse().map_err(|_| Error::format("results csv", format!("bad integer in column {i}")))
        };
        out.push(CvResult {
            participant_id: f(0)?.to_string(),
            model: f(1)?.parse()?,
            domain: f(2)?.parse()?,
            window_ms: int(3)? as u32,
            cv: [num(4)?, num(5)?, num(6)?],
            trial_cv: [num(7)?, num(8)?, num(9)?],
            test_rows: int(10)?,
            test_trials: int(11)?,
            epochs: int(12)?,
        });
    }
    Ok(out)
}

fn aggregates_csv(rt: &ReportTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "domain", "window_ms"];
    header.extend([
        "mean_cv_x", "mean_cv_y", "mean_cv_z", "std_cv_x", "std_cv_y", "std_cv_z", "n_x", "n_y", "n_z",
        "mean_trial_cv_x", "mean_trial_cv_y", "mean_trial_cv_z", "std_trial_cv_x", "std_trial_cv_y",
        "std_trial_cv_z",
    ]);
    w.write_record(&header).map_err(csv_err)?;
    for a in rt.aggregates() {
        let mut rec = vec![a.model.to_string(), a.domain.to_string(), a.window_ms.to_string()];
        rec.extend(a.cv.iter().map(|s| s.mean.to_string()));
        rec.extend(a.cv.iter().map(|s| s.std.to_string()));
        rec.extend(a.cv.iter().map(|s| s.n.to_string()));
        rec.extend(a.trial_cv.iter().map(|s| s.mean.to_string()));
        rec.extend(a.trial_cv.iter().map(|s| s.std.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format("csv", e.to_string()))
}

/// Participants down, windows × domains × axes across, one block per model.
pub fn text_table(rt: &ReportTable) -> String {
    let windows = rt.windows();
    let domains = rt.domains();
    let participants = rt.participants();
    let aggregates = rt.aggregates();
    let cell_w = 13;
    let mut out = String::new();
    for model in rt.models() {
        let _ = writeln!(out, "Model: {model}  (pooled test-set CV, x/y/z)");
        let mut line = format!("{:<14}", "Window");
        for w in &windows {
            let _ = write!(line, "| {:<width$}", format!("{w} ms"), width = domains.len() * 3 * cell_w - 2);
        }
        let _ = writeln!(out, "{line}");
        let mut line = format!("{:<14}", "Participant");
        for _ in &windows {
            line.push('|');
            for d in &domains {
                for axis in ["x", "y", "z"] {
                    let _ = write!(line, "{:>width$}", format!("{d} {axis}"), width = cell_w - 1);
                    line.push(' ');
                }
            }
        }
        let _ = writeln!(out, "{line}");
        let _ = writeln!(out, "{}", "-".repeat(line.len()));
        for p in &participants {
            let mut line = format!("{p:<14}");
            for &w in &windows {
                line.push('|');
                for &d in &domains {
                    let row = rt
                        .rows
                        .iter()
                        .find(|r| r.model == model && r.domain == d && r.window_ms == w && &r.participant_id == p);
                    for a in 0..3 {
                        let s = row.map_or("-".to_string(), |r| format!("{:.2}", r.cv[a]));
                        let _ = write!(line, "{s:>width$} ", width = cell_w - 1);
                    }
                }
            }
            let _ = writeln!(out, "{line}");
        }
        let mut line = format!("{:<14}", "Mean ± std");
        for &w in &windows {
            line.push('|');
            for &d in &domains {
                let agg = aggregates.iter().find(|a| a.model == model && a.domain == d && a.window_ms == w);
                for a in 0..3 {
                    let s = agg.map_or("-".to_string(), |g| format!("{:.2}±{:.2}", g.cv[a].mean, g.cv[a].std));
                    let _ = write!(line, "{s:>width$} ", width = cell_w - 1);
                }
            }
        }
        let _ = writeln!(out, "{line}\n");
    }
    if !rt.failures.is_empty() {
        let _ = writeln!(out, "Failed cells:");
        for f in &rt.failures {
            let _ = writeln!(
                out,
                "  {} / {} / {} ms / {}: {}",
                f.participant_id, f.domain, f.window_ms, f.model, f.error
            );
        }
    }
    out
}

/// Grouped bar chart of mean pooled CV: one `<g class="window">` per
/// window, one bar per (model, domain, axis) inside it.
pub fn svg_chart(rt: &ReportTable) -> String {
    let windows = rt.windows();
    let aggregates = rt.aggregates();
    let series: Vec<(ModelKind, Domain)> = rt
        .models()
        .into_iter()
        .flat_map(|m| rt.domains().into_iter().map(move |d| (m, d)))
        .collect();
    let bar_w = 12.0;
    let group_w = (series.len() * 3) as f64 * bar_w + 30.0;
    let (left, top, plot_h) = (50.0, 20.0, 200.0);
    let width = left + group_w * windows.len() as f64 + 160.0;
    let height = top + 2.0 * plot_h + 40.0;
    let zero_y = top + plot_h;
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{zero_y}" x2="{:.0}" y2="{zero_y}" stroke="black"/>"#,
        width - 160.0
    );
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let y = zero_y - tick * plot_h;
        let _ = writeln!(s, r#"<text x="{:.0}" y="{y:.1}" text-anchor="end">{tick:.1}</text>"#, left - 5.0);
    }
    for (wi, &w) in windows.iter().enumerate() {
        let gx = left + wi as f64 * group_w + 15.0;
        let _ = writeln!(s, r#"<g class="window" data-window-ms="{w}">"#);
        for (si, &(m, d)) in series.iter().enumerate() {
            let agg = aggregates.iter().find(|a| a.model == m && a.domain == d && a.window_ms == w);
            for axis in 0..3 {
                let v = agg.map_or(f64::NAN, |a| a.cv[axis].mean);
                if v.is_nan() {
                    continue;
                }
                let x = gx + (si * 3 + axis) as f64 * bar_w;
                let h = v.abs() * plot_h;
                let y = if v >= 0.0 { zero_y - h } else { zero_y };
                let _ = writeln!(
                    s,
                    r#"  <rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="{}" fill-opacity="{}"><title>{m} {d} {} {v:.3}</title></rect>"#,
                    bar_w - 1.0,
                    colors[si % colors.len()],
                    [1.0, 0.7, 0.45][axis],
                    ["x", "y", "z"][axis]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"  <text x="{:.1}" y="{:.0}" text-anchor="middle">{w} ms</text>"#,
            gx + (group_w - 30.0) / 2.0,
            height - 10.0
        );
        let _ = writeln!(s, "</g>");
    }
    for (si, (m, d)) in series.iter().enumerate() {
        let y = top + 15.0 * si as f64;
        let x = width - 150.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.0}" y="{y:.0}" width="10" height="10" fill="{}"/><text x="{:.0}" y="{:.0}">{m} {d} (x/y/z shaded)</text>"#,
            colors[si % colors.len()],
            x + 14.0,
            y + 9.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `cv_results.csv`, `aggregates.csv`, `table.txt` and
/// `cv_bars.svg` into `out_dir`, returning the paths.
pub fn emit_report(rt: &ReportTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rt.rows.is_empty() && rt.failures.is_empty() {
        return Err(Error::invalid("report table is empty"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let files = [
        ("cv_results.csv", results_csv(rt)?),
        ("aggregates.csv", aggregates_csv(rt)?),
        ("table.txt", text_table(rt)),
        ("cv_bars.svg", svg_chart(rt)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
