use serde::Serialize;

use super::{check_time, split_cat, VelocityModel, VelocityOutput};
use crate::codec::PromptEmbedding;
use crate::error::{Error, Result};
use crate::latent::LatentTensor;

/// Target distribution `N(mu, sigma^2 I)` for the analytic rectified flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianFlowSpec {
    mu: Vec<f64>,
    sigma: f64,
}

impl GaussianFlowSpec {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu must be a nonempty finite vector"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn scalar(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![mu], sigma)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Mean for element `i`; `mu` repeats along the flat element index.
    fn mu_at(&self, i: usize) -> f64 {
        self.mu[i % self.mu.len()]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len % self.mu.len() != 0 {
            return Err(Error::shape(format!(
                "mu of length {} does not tile {len} elements",
                self.mu.len()
            )));
        }
        Ok(())
    }
}

/// `E[X1 − X0 | X_tau = x]` for `X_tau = tau X1 + (1 − tau) X0`,
/// `X0 ~ N(0, I)`, `X1 ~ N(mu, sigma^2 I)`, with data-time `tau = 1 − t`.
pub fn gaussian_velocity(spec: &GaussianFlowSpec, x: &LatentTensor, t: f64) -> Result<LatentTensor> {
    check_time(t)?;
    spec.check_len(x.len())?;
    let tau = 1.0 - t;
    let s2 = spec.sigma * spec.sigma;
    let gain = (tau * s2 - (1.0 - tau)) / (tau * tau * s2 + (1.0 - tau) * (1.0 - tau));
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mu = spec.mu_at(i);
            mu + gain * (xi - tau * mu)
        })
        .collect();
    x.with_data(data, "gaussian_velocity")
}

/// Closed-form flow map `x(tau) = tau mu + sqrt(tau^2 sigma^2 + (1 − tau)^2) x0`.
pub fn gaussian_flow_map(spec: &GaussianFlowSpec, x0: &LatentTensor, tau: f64) -> Result<LatentTensor> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("data time {tau} outside [0, 1]")));
    }
    spec.check_len(x0.len())?;
    let scale = (tau * tau * spec.sigma * spec.sigma + (1.0 - tau) * (1.0 - tau)).sqrt();
    let data = x0
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| tau * spec.mu_at(i) + scale * x)
        .collect();
    x0.with_data(data, "gaussian_flow_map")
}

/// Prompt-conditioned Gaussian oracle: the prompt text selects the target
/// distribution, and the velocity is evaluated on the noisy half of `z_cat`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussianModel {
    specs: Vec<(String, GaussianFlowSpec)>,
}

impl ConditionalGaussianModel {
    pub fn new(specs: Vec<(String, GaussianFlowSpec)>) -> Self {
        Self { specs }
    }

    fn spec_for(&self, e_p: &PromptEmbedding) -> Result<&GaussianFlowSpec> {
        self.specs
            .iter()
            .find(|(text, _)| text == e_p.source_text())
            .map(|(_, s)| s)
            .ok_or_else(|| Error::invalid(format!("no Gaussian target for prompt {:?}", e_p.source_text())))
    }
}

impl VelocityModel for ConditionalGaussianModel {
    fn evaluate(&self, z_cat: &LatentTensor, e_p: &PromptEmbedding, t: f64) -> Result<VelocityOutput> {
        let (noisy, _context) = split_cat(z_cat)?;
        let v = gaussian_velocity(self.spec_for(e_p)?, &noisy, t)?;
        Ok(VelocityOutput { v, attention: None })
    }
}
