//! The optimization loop and its configuration.

pub mod adam;
pub mod config;
pub mod run;
pub mod session;

pub use adam::{Adam, AdamParams};
pub use config::{Mode, ProviderConfig, RunConfig};
pub use run::{run, RunOutcome};
pub use session::{Evaluation, Session, SessionSettings};
