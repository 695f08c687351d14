//! Velocity models `Φ(z_cat, e_p, t)`.
//!
//! A model receives the concatenated latent `[noisy stream ‖ context]` in
//! token layout and returns the velocity for the noisy (first) half only.
//! Velocities point in the data direction, i.e. they estimate
//! `E[X_data − X_noise | z]`; integrating toward data at noise level `t`
//! therefore moves along `+v` as `t` decreases.

mod doublestream;
mod gaussian;

pub use doublestream::{attention_weights, ToyDoubleStream, DEFAULT_GAIN, MODEL_DIM, NUM_HEADS};
pub use gaussian::{gaussian_flow_map, gaussian_velocity, ConditionalGaussianModel, GaussianFlowSpec};

use crate::attnboost::AttentionTensor;
use crate::codec::PromptEmbedding;
use crate::error::{Error, Result};
use crate::latent::LatentTensor;

#[derive(Debug, Clone)]
pub struct VelocityOutput {
    pub v: LatentTensor,
    pub attention: Option<AttentionTensor>,
}

pub trait VelocityModel: Send + Sync {
    /// Must be pure: identical inputs give bit-identical outputs.
    fn evaluate(&self, z_cat: &LatentTensor, e_p: &PromptEmbedding, t: f64) -> Result<VelocityOutput>;
}

/// Splits `[noisy ‖ context]` into its two equal halves.
pub fn split_cat(z_cat: &LatentTensor) -> Result<(LatentTensor, LatentTensor)> {
    let n = z_cat.shape().first().copied().unwrap_or(0);
    z_cat.token_dim()?;
    if n == 0 || n % 2 != 0 {
        return Err(Error::shape(format!("concatenated latent needs an even token count, got {n}")));
    }
    Ok((z_cat.slice_tokens(0..n / 2)?, z_cat.slice_tokens(n / 2..n)?))
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("noise level {t} outside [0, 1]")));
    }
    Ok(())
}
