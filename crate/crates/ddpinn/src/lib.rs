//! Experiment harness around `ddpinn-core`: JSON run configurations and
//! records, a multi-threaded subdomain executor, reproduction of the
//! benchmark tables, and the verification suite behind `ddpinn verify`.

pub mod config;
pub mod io;
pub mod run;
pub mod tables;
pub mod verify;

pub use config::{Overrides, PartitionRecipe, RunConfig};
pub use run::{run, RayonExecutor, RunRecord};
