//! Scout atlases (region → member sources) and region-mean time series.
//!
//! Text format, one region per line: `region_name: idx,idx,...`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::sloreta::SourceEstimate;
use crate::error::{Error, Result};

/// Region count of the default atlas.
pub const DEFAULT_REGIONS: usize = 62;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoutAtlas {
    labels: Vec<String>,
    members: Vec<Vec<usize>>,
}

impl ScoutAtlas {
    /// Regions must be non-empty and pairwise disjoint.
    pub fn new(labels: Vec<String>, members: Vec<Vec<usize>>) -> Result<Self> {
        if labels.len() != members.len() {
            return Err(Error::shape(format!(
                "{} labels for {} regions",
                labels.len(),
                members.len()
            )));
        }
        let mut seen = HashSet::new();
        for (label, m) in labels.iter().zip(&members) {
            if m.is_empty() {
                return Err(Error::invalid(format!("region {label:?} has no sources")));
            }
            if let Some(dup) = m.iter().find(|&&i| !seen.insert(i)) {
                return Err(Error::invalid(format!(
                    "source {dup} appears in more than one region (second: {label:?})"
                )));
            }
        }
        Ok(ScoutAtlas { labels, members })
    }

    /// Splits `n_sources` into `n_regions` contiguous index runs, the first
    /// `n_sources % n_regions` runs one longer.
    pub fn contiguous(n_sources: usize, n_regions: usize) -> Result<Self> {
        if n_regions == 0 || n_sources < n_regions {
            return Err(Error::invalid(format!(
                "cannot split {n_sources} sources into {n_regions} regions"
            )));
        }
        let base = n_sources / n_regions;
        let extra = n_sources % n_regions;
        let mut start = 0;
        let mut members = Vec::with_capacity(n_regions);
        for r in 0..n_regions {
            let len = base + usize::from(r < extra);
            members.push((start..start + len).collect());
            start += len;
        }
        let labels = (1..=n_regions).map(|r| format!("scout_{r:02}")).collect();
        ScoutAtlas::new(labels, members)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn n_regions(&self) -> usize {
        self.labels.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.members.iter().flatten().copied().max()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut members = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, idx) = line
                .split_once(':')
                .ok_or_else(|| Error::format("atlas", format!("line {}: missing ':'", lineno + 1)))?;
            let ids = idx
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>().map_err(|_| {
                        Error::format("atlas", format!("line {}: bad source index {s:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            labels.push(name.trim().to_string());
            members.push(ids);
        }
        ScoutAtlas::new(labels, members)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (label, m) in self.labels.iter().zip(&self.members) {
            let ids: Vec<String> = m.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{label}: {}\n", ids.join(",")));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }
}

/// Region-mean activations, rows in atlas label order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoutSeries {
    pub activations: DMatrix<f64>,
    pub fs: f64,
    pub labels: Vec<String>,
}

/// Arithmetic (signed) mean of each region's member rows, per sample.
pub fn scout_means(se: &SourceEstimate, atlas: &ScoutAtlas) -> Result<ScoutSeries> {
    let k = se.activations.nrows();
    if let Some(max) = atlas.max_index().filter(|&m| m >= k) {
        return Err(Error::invalid(format!(
            "atlas references source {max}, estimate has only {k} sources"
        )));
    }
    let samples = se.activations.ncols();
    let mut out = DMatrix::zeros(atlas.n_regions(), samples);
    for (r, m) in atlas.members().iter().enumerate() {
        let mut row = out.row_mut(r);
        for &src in m {
            row += se.activations.row(src);
        }
        row /= m.len() as f64;
    }
    Ok(ScoutSeries {
        activations: out,
        fs: se.fs,
        labels: atlas.labels().to_vec(),
    })
}
