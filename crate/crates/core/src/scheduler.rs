//! Denoising integrators: plain Euler, the overshoot sampler with noise
//! compensation, and the attention-modulated step.
//!
//! Overshoot formulas are written in data-time `s = 1 − t` (0 = noise,
//! 1 = data), see [`time`]. For a step from `t_cur` to `t_next` the step size
//! is `ε = t_cur − t_next` and the target data-time is `s = 1 − t_next`:
//!
//! ```text
//! o   = min(s + ε c Â, o_max)                 per element
//! Ẑ_o = z + (o − s_cur) v                     = z + ε (1 + c Â) v when unclamped
//! a   = s / o,  b = sqrt((1 − s)^2 − s^2 (1 − o)^2 / o^2)
//! z'  = a Ẑ_o + b ξ,  ξ ~ N(0, I)
//! ```

use serde::{Deserialize, Serialize};

use crate::attnboost::{compute_guidance, GuidanceMap};
use crate::codec::PromptEmbedding;
use crate::error::{Error, Result};
use crate::latent::{LatentTensor, SeededRng, SigmaSchedule};
use crate::velocity::VelocityModel;

pub const DEFAULT_INTENSITY: f64 = 2.0;
pub const DEFAULT_O_MAX: f64 = 1.0;

/// The single place where noise-time and data-time meet.
pub mod time {
    /// Data-time `s = 1 − t`.
    pub fn data_time(t: f64) -> f64 {
        1.0 - t
    }

    /// `dz/dt` in noise-time from a data-direction velocity.
    pub fn canonical_velocity(v_data: f64) -> f64 {
        -v_data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Euler,
    Overshoot,
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "overshoot" => Ok(Self::Overshoot),
            other => Err(Error::invalid(format!("unknown scheduler {other:?}"))),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Overshoot => "overshoot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub t_cur: f64,
    pub t_next: f64,
    pub c: f64,
    pub o_max: f64,
}

impl StepSpec {
    pub fn new(t_cur: f64, t_next: f64, c: f64, o_max: f64) -> Result<Self> {
        if !(0.0 <= t_next && t_next < t_cur && t_cur <= 1.0) {
            return Err(Error::invalid(format!("need 0 <= t_next < t_cur <= 1, got {t_cur} -> {t_next}")));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("overshoot intensity must be >= 0, got {c}")));
        }
        if !(o_max > 0.0 && o_max <= 1.0) {
            return Err(Error::invalid(format!("o_max must lie in (0, 1], got {o_max}")));
        }
        Ok(Self {
            t_cur,
            t_next,
            c,
            o_max,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.t_cur - self.t_next
    }

    /// Target data-time `s`.
    pub fn target(&self) -> f64 {
        time::data_time(self.t_next)
    }
}

/// Per-position overshoot modulation `Â`.
#[derive(Debug, Clone, Copy)]
pub enum Modulation<'a> {
    Uniform(f64),
    Map(&'a GuidanceMap),
}

impl Modulation<'_> {
    /// `Â` broadcast to every element of `z` (over the token dim or channels).
    fn per_element(&self, z: &LatentTensor) -> Result<Vec<f64>> {
        match *self {
            Modulation::Uniform(a) => {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::invalid(format!("modulation {a} outside [0, 1]")));
                }
                Ok(vec![a; z.len()])
            }
            Modulation::Map(map) => {
                let n = z.n_positions();
                if map.values().len() != n {
                    return Err(Error::shape(format!(
                        "guidance grid {:?} vs {n} latent positions",
                        map.grid()
                    )));
                }
                let per_pos = z.len() / n;
                Ok(match z.layout() {
                    crate::latent::Layout::Tokens => map
                        .values()
                        .iter()
                        .flat_map(|&a| std::iter::repeat(a).take(per_pos))
                        .collect(),
                    crate::latent::Layout::Grid => (0..z.len()).map(|i| map.values()[i % n]).collect(),
                })
            }
        }
    }
}

/// `z + v (t_next − t_cur)` with `v` the noise-time velocity `dz/dt`.
pub fn euler_step(z: &LatentTensor, v: &LatentTensor, t_cur: f64, t_next: f64) -> Result<LatentTensor> {
    let dt = t_next - t_cur;
    z.zip_map(v, "euler_step", |z, v| z + v * dt)
}

/// `min(s + ε c Â, o_max)`, never below `s`.
pub fn overshoot_point(s: f64, step: f64, c: f64, a_hat: f64, o_max: f64) -> f64 {
    (s + step * c * a_hat).min(o_max).max(s)
}

/// `z + ε (1 + c Â) ⊙ v` with a data-direction `v`, unclamped.
pub fn overshoot_advance(z: &LatentTensor, v: &LatentTensor, step: f64, c: f64, a_hat: Modulation<'_>) -> Result<LatentTensor> {
    z.ensure_same_shape(v, "overshoot_advance")?;
    let a = a_hat.per_element(z)?;
    let data = z
        .data()
        .iter()
        .zip(v.data())
        .zip(&a)
        .map(|((&z, &v), &a)| z + step * (1.0 + c * a) * v)
        .collect();
    z.with_data(data, "overshoot_advance")
}

fn check_coeff_domain(s: f64, o: f64) -> Result<()> {
    if !(0.0 < s && s <= o && o <= 1.0) {
        return Err(Error::invalid(format!("need 0 < s <= o <= 1, got s={s} o={o}")));
    }
    Ok(())
}

/// `(1 − s)^2 − s^2 (1 − o)^2 / o^2` in the factored form `(1 − a)(1 + a − 2s)`,
/// which is exactly zero at `o = s`.
pub fn compensation_radicand(s: f64, o: f64) -> f64 {
    let a = s / o;
    (1.0 - a) * (1.0 + a - 2.0 * s)
}

/// `a = s / o`, `b = sqrt((1 − s)^2 − s^2 (1 − o)^2 / o^2)`.
pub fn compensation_coeffs(s: f64, o: f64) -> Result<(f64, f64)> {
    check_coeff_domain(s, o)?;
    Ok((s / o, compensation_radicand(s, o).max(0.0).sqrt()))
}

/// Overshoot then compensate. `v` is the data-direction velocity at `t_cur`.
/// Noise is drawn only when some `b > 0`, so `c = 0` consumes no randomness
/// and reproduces [`euler_step`] bit for bit.
pub fn overshoot_step(
    z: &LatentTensor,
    v: &LatentTensor,
    spec: &StepSpec,
    a_hat: Modulation<'_>,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    z.ensure_same_shape(v, "overshoot_step")?;
    let step = spec.step_size();
    let s = spec.target();
    let a_hat = a_hat.per_element(z)?;

    let mut advanced = Vec::with_capacity(z.len());
    let mut a_coef = Vec::with_capacity(z.len());
    let mut b_coef = Vec::with_capacity(z.len());
    for ((&zi, &vi), &ai) in z.data().iter().zip(v.data()).zip(&a_hat) {
        let o = overshoot_point(s, step, spec.c, ai, spec.o_max);
        let (a, b) = compensation_coeffs(s, o)?;
        advanced.push(zi + (step + (o - s)) * vi);
        a_coef.push(a);
        b_coef.push(b);
    }

    let noisy = b_coef.iter().any(|&b| b > 0.0);
    let data = if noisy {
        let xi = rng.normals(z.len());
        advanced
            .iter()
            .zip(&a_coef)
            .zip(&b_coef)
            .zip(&xi)
            .map(|(((&zo, &a), &b), &x)| a * zo + b * x)
            .collect()
    } else {
        advanced.iter().zip(&a_coef).map(|(&zo, &a)| a * zo).collect()
    };
    z.with_data(data, "overshoot_step")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig {
    pub scheduler: SchedulerKind,
    pub c: f64,
    pub gamma: f64,
    pub o_max: f64,
    /// Latent grid `(rows, cols)` the guidance map is laid out on.
    pub grid: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ModulatedOutput {
    pub z_next: LatentTensor,
    /// The `Â` used for this step (absent for plain Euler without a supplied map).
    pub guidance: Option<GuidanceMap>,
}

/// Attention-modulated step over `sigmas[i] -> sigmas[i + 1]`.
///
/// The model sees `[z ‖ context]` and `e_p`. When `a_hat` is `None` the map
/// is computed from the model's attention at this step.
#[allow(clippy::too_many_arguments)]
pub fn modulated_step(
    z: &LatentTensor,
    a_hat: Option<&GuidanceMap>,
    schedule: &SigmaSchedule,
    i: usize,
    model: &dyn VelocityModel,
    e_p: &PromptEmbedding,
    context: &LatentTensor,
    rng: &mut SeededRng,
    cfg: &ModulationConfig,
) -> Result<ModulatedOutput> {
    let (t_cur, t_next) = schedule.step(i)?;
    let out = model.evaluate(&z.concat_tokens(context)?, e_p, t_cur)?;
    match cfg.scheduler {
        SchedulerKind::Euler => {
            let v_canon = out.v.map("canonical velocity", time::canonical_velocity)?;
            Ok(ModulatedOutput {
                z_next: euler_step(z, &v_canon, t_cur, t_next)?,
                guidance: a_hat.cloned(),
            })
        }
        SchedulerKind::Overshoot => {
            let guidance = match a_hat {
                Some(map) => map.clone(),
                None => {
                    let attention = out
                        .attention
                        .as_ref()
                        .ok_or_else(|| Error::invalid("model exposes no attention and no guidance map was supplied"))?;
                    let span = attention
                        .text_rows()
                        .ok_or_else(|| Error::invalid("attention has no text tokens"))?;
                    compute_guidance(attention, span, cfg.gamma, cfg.grid)?
                }
            };
            let spec = StepSpec::new(t_cur, t_next, cfg.c, cfg.o_max)?;
            let z_next = overshoot_step(z, &out.v, &spec, Modulation::Map(&guidance), rng)?;
            Ok(ModulatedOutput {
                z_next,
                guidance: Some(guidance),
            })
        }
    }
}
