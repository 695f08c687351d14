//! Flow manifold steering: phase-1 trajectory steering by the difference of
//! target- and source-conditioned velocities.
//!
//! One step at noise level `t`:
//!
//! ```text
//! z_src_t = (1 − t) z_src + t ε
//! z_tar_t = z_t + (z_src_t − z_src)
//! V       = η (Φ([z_tar_t ‖ z_t], e_tar) − Φ([z_src_t ‖ z_t], e_src))
//! z_t    ← z_t + V (t − t_next)
//! ```

use crate::codec::PromptEmbedding;
use crate::error::{Error, Result};
use crate::latent::{LatentTensor, SigmaSchedule};
use crate::velocity::VelocityModel;

pub const DEFAULT_STRENGTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FmsState {
    z_src: LatentTensor,
    eps: LatentTensor,
    z_t: LatentTensor,
    strength: f64,
}

impl FmsState {
    /// Starts the edit trajectory at the clean source latent.
    pub fn new(z_src: LatentTensor, eps: LatentTensor, strength: f64) -> Result<Self> {
        z_src.ensure_same_shape(&eps, "FmsState noise")?;
        check_strength(strength)?;
        Ok(Self {
            z_t: z_src.clone(),
            z_src,
            eps,
            strength,
        })
    }

    pub fn z_src(&self) -> &LatentTensor {
        &self.z_src
    }

    pub fn eps(&self) -> &LatentTensor {
        &self.eps
    }

    pub fn z_t(&self) -> &LatentTensor {
        &self.z_t
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn into_latent(self) -> LatentTensor {
        self.z_t
    }

    /// Replaces the run noise (used when noise is resampled every step).
    pub fn with_eps(self, eps: LatentTensor) -> Result<Self> {
        self.z_src.ensure_same_shape(&eps, "FmsState noise")?;
        Ok(Self { eps, ..self })
    }
}

fn check_strength(strength: f64) -> Result<()> {
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(Error::invalid(format!("strength must be positive, got {strength}")));
    }
    Ok(())
}

fn check_level(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("noise level {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1 − t) z_src + t ε`
pub fn inject_noise(z_src: &LatentTensor, t: f64, eps: &LatentTensor) -> Result<LatentTensor> {
    check_level(t)?;
    z_src.zip_map(eps, "inject_noise", |x, e| (1.0 - t) * x + t * e)
}

/// `z_t + (z_src_t − z_src)`
pub fn correct_target(z_t: &LatentTensor, z_src_t: &LatentTensor, z_src: &LatentTensor) -> Result<LatentTensor> {
    z_t.add(&z_src_t.sub(z_src)?)
}

/// Token-axis `[stream ‖ context]`.
pub fn concat_states(stream: &LatentTensor, context: &LatentTensor) -> Result<LatentTensor> {
    stream.concat_tokens(context)
}

/// `strength * (Φ(tar_cat, e_tar, t) − Φ(src_cat, e_src, t))`
pub fn velocity_differential(
    model: &dyn VelocityModel,
    src_cat: &LatentTensor,
    tar_cat: &LatentTensor,
    e_src: &PromptEmbedding,
    e_tar: &PromptEmbedding,
    t: f64,
    strength: f64,
) -> Result<LatentTensor> {
    src_cat.ensure_same_shape(tar_cat, "velocity_differential")?;
    check_strength(strength)?;
    let v_tar = model.evaluate(tar_cat, e_tar, t)?.v;
    let v_src = model.evaluate(src_cat, e_src, t)?.v;
    v_tar.zip_map(&v_src, "velocity_differential", |a, b| strength * (a - b))
}

/// `z_t + V (t_prev − t_cur)`
pub fn shift_trajectory(z_t: &LatentTensor, v_delta: &LatentTensor, t_prev: f64, t_cur: f64) -> Result<LatentTensor> {
    check_level(t_prev)?;
    check_level(t_cur)?;
    let dt = t_prev - t_cur;
    z_t.zip_map(v_delta, "shift_trajectory", |z, v| z + v * dt)
}

/// One steering step over the schedule transition `sigmas[i] -> sigmas[i + 1]`.
pub fn fms_step(
    state: &FmsState,
    model: &dyn VelocityModel,
    schedule: &SigmaSchedule,
    i: usize,
    e_src: &PromptEmbedding,
    e_tar: &PromptEmbedding,
) -> Result<FmsState> {
    let (t, t_next) = schedule.step(i)?;
    let z_src_t = inject_noise(&state.z_src, t, &state.eps)?;
    let z_tar_t = correct_target(&state.z_t, &z_src_t, &state.z_src)?;
    let src_cat = concat_states(&z_src_t, &state.z_t)?;
    let tar_cat = concat_states(&z_tar_t, &state.z_t)?;
    let v_delta = velocity_differential(model, &src_cat, &tar_cat, e_src, e_tar, t, state.strength)?;
    let z_edit = shift_trajectory(&state.z_t, &v_delta, t, t_next)?;
    Ok(FmsState {
        z_t: z_edit,
        ..state.clone()
    })
}
