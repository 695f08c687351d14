//! Training-free flow-matching editing: trajectory steering between source
//! and target prompts, attention-guided overshoot sampling, and a synthetic
//! glyph-scene harness with oracles and metrics.

pub mod attnboost;
pub mod cli;
pub mod codec;
pub mod error;
pub mod fms;
pub mod glyph;
pub mod latent;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod raster;
pub mod scheduler;
pub mod velocity;

pub use error::{Error, Result};
pub use latent::{LatentTensor, SeededRng};
pub use pipeline::{run_edit, EditConfig, EditResult};
