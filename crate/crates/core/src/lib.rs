//! Online cost-aware deep Q-learning for single-instrument trading.
//!
//! - [`market`]: price series, difference features, synthetic markets
//! - [`netcore`]: LSTM + dense Q network with analytic gradients
//! - [`env`]: position accounting and per-step reward net of cost
//! - [`agent`]: replay buffer and the learner/trader online loop
//! - [`metrics`]: round-trip trade segmentation and report statistics
//! - [`baseline`]: four-class LSTM move classifier for comparison
//! - [`cli`]: the `holdq` command line

pub mod agent;
pub mod baseline;
pub mod cli;
pub mod env;
pub mod error;
pub mod market;
pub mod metrics;
pub mod netcore;

pub use error::{Error, Result};
