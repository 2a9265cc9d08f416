//! Monte-Carlo harness for the TLMP decoder: configuration, single trials,
//! parameter sweeps and CSV/JSON output.

pub mod config;
pub mod error;
pub mod io;
pub mod sweep;
pub mod trial;

pub use config::{ChannelKind, CollisionMode, SimConfig};
pub use error::{Result, SimError};
pub use sweep::{run_point, run_sweep, Axis, SweepRow};
pub use trial::{run_trial, trial_seed, TrialResult};
