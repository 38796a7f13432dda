//! Decoding hand kinematics from pre-movement EEG, in sensor or cortical
//! source space.
//!
//! Pipeline:
//!
//! ```text
//! TrialSet (raw EEG + hand position)
//!   ├─ signal::preprocess_trialset   band-pass, average reference, downsample;
//!   │                                smooth + min-max kinematics
//!   ├─ source::sloreta_*             lead field → sLORETA kernel → sources
//!   ├─ source::scout_means           62 region means, then z-scored
//!   ├─ dataset::assemble_dataset     lag windows ending 50 ms before each target
//!   ├─ nn::train / nn::mlr_fit       residual CNN-LSTM or ridge baseline
//!   └─ eval::pearson_cv              per-axis correlation on held-out trials
//! ```

mod binio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod session;
pub mod signal;
pub mod source;
pub mod synth;

pub use error::{Error, Result};
pub use session::{load_trialset, save_trialset, SessionFormat, Trial, TrialSet};
