//! Forward model, sLORETA inverse and scout reduction.

pub mod atlas;
pub mod leadfield;
pub mod sloreta;
pub mod sphere;

pub use atlas::{scout_means, ScoutAtlas, ScoutSeries, DEFAULT_REGIONS};
pub use leadfield::{load_lead_field, save_lead_field, LeadField};
pub use sloreta::{
    apply_inverse, sloreta_from_gain, sloreta_inverse_operator, InverseOperator, NoiseCov,
    Regularization, SourceEstimate,
};
pub use sphere::{spherical_lead_field, Dipole, HEAD_RADIUS};

use crate::error::Result;

/// Sensor and source counts of the built-in head model.
pub const DEFAULT_SENSORS: usize = 32;
pub const DEFAULT_SOURCES: usize = 500;

/// Built-in spherical head model: lead field plus its contiguous atlas.
pub fn builtin_head_model(
    n_sensors: usize,
    n_sources: usize,
    n_regions: usize,
) -> Result<(LeadField, ScoutAtlas)> {
    let dirs = sphere::default_sensor_directions(n_sensors);
    let (dipoles, _) = sphere::default_source_space(n_sources, n_regions, HEAD_RADIUS)?;
    let lf = spherical_lead_field(&dirs, &dipoles, HEAD_RADIUS)?;
    let atlas = ScoutAtlas::contiguous(n_sources, n_regions)?;
    Ok((lf, atlas))
}

/// Default electrode labels for `n` channels: `E01`, `E02`, ...
pub fn default_channel_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("E{i:02}")).collect()
}

/// Projects every trial of a preprocessed (average-referenced) session to
/// scout space: sLORETA on the average-referenced lead field, then region
/// means. Channels of the result are the atlas labels.
pub fn scout_trialset(
    ts: &crate::session::TrialSet,
    lead_field: &LeadField,
    atlas: &ScoutAtlas,
    reg: Regularization,
) -> Result<crate::session::TrialSet> {
    use crate::error::Error;
    use crate::session::{Trial, TrialSet};

    if ts.n_channels() != lead_field.n_sensors() {
        return Err(Error::shape(format!(
            "session has {} channels, lead field has {} sensors",
            ts.n_channels(),
            lead_field.n_sensors()
        )));
    }
    let op = sloreta_inverse_operator(&lead_field.average_referenced()?, &NoiseCov::Identity, reg)?;
    log::info!(
        "{}: sLORETA operator {}x{} (alpha {:.4e}, noise cov {})",
        ts.participant_id,
        op.n_sources(),
        op.n_sensors(),
        op.alpha(),
        op.noise_cov_desc()
    );
    let trials = ts
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let se = apply_inverse(&op, &t.eeg, ts.fs).map_err(|e| Error::Trial { trial: i, detail: e.to_string() })?;
            let scouts = scout_means(&se, atlas)?;
            Trial::new(scouts.activations, t.kinematics.clone(), t.onset_index, t.end_index)
        })
        .collect::<Result<Vec<_>>>()?;
    TrialSet::new(ts.participant_id.clone(), ts.fs, atlas.labels().to_vec(), trials)
}
