//! Sampler checks on the analytic 1-D Gaussian flow: endpoint statistics,
//! KS conformance against the target law, and Euler convergence order.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::latent::{linspace_schedule, LatentTensor, SeededRng};
use crate::metrics::ks_statistic;
use crate::scheduler::{euler_step, overshoot_step, time, Modulation, SchedulerKind, StepSpec, DEFAULT_O_MAX};
use crate::velocity::{gaussian_flow_map, gaussian_velocity, GaussianFlowSpec};

pub const CONVERGENCE_STEPS: [usize; 3] = [25, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleConfig {
    pub mu: f64,
    pub sigma: f64,
    pub steps: usize,
    pub samples: usize,
    pub scheduler: SchedulerKind,
    pub c: f64,
    pub o_max: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mu: 2.0,
            sigma: 0.5,
            steps: 200,
            samples: 100_000,
            scheduler: SchedulerKind::Overshoot,
            c: 1.0,
            o_max: DEFAULT_O_MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub config: OracleConfig,
    pub mean: f64,
    pub std: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Endpoint errors of Euler at 25, 50 and 100 steps.
    pub euler_errors: Vec<f64>,
    /// Successive error ratios (25→50, 50→100).
    pub euler_ratios: Vec<f64>,
}

/// Integrates `x` from noise (t = 1) to data (t = 0) with the chosen scheduler.
/// Overshoot runs with a uniform modulation `Â = 1`.
pub fn integrate(
    spec: &GaussianFlowSpec,
    x: LatentTensor,
    steps: usize,
    scheduler: SchedulerKind,
    c: f64,
    o_max: f64,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    let schedule = linspace_schedule(steps, 1.0)?;
    let mut z = x;
    for i in 0..steps {
        let (t, t_next) = schedule.step(i)?;
        let v = gaussian_velocity(spec, &z, t)?;
        z = match scheduler {
            SchedulerKind::Euler => euler_step(&z, &v.map("canonical velocity", time::canonical_velocity)?, t, t_next)?,
            SchedulerKind::Overshoot => {
                overshoot_step(&z, &v, &StepSpec::new(t, t_next, c, o_max)?, Modulation::Uniform(1.0), rng)?
            }
        };
    }
    Ok(z)
}

fn column(values: Vec<f64>) -> Result<LatentTensor> {
    let n = values.len();
    LatentTensor::tokens(n, 1, values)
}

/// Max endpoint error of Euler against the closed-form flow map, per step count.
pub fn euler_errors(spec: &GaussianFlowSpec, starts: &[f64], step_counts: &[usize]) -> Result<Vec<f64>> {
    let x0 = column(starts.to_vec())?;
    let exact = gaussian_flow_map(spec, &x0, 1.0)?;
    let mut unused = SeededRng::new(0);
    step_counts
        .iter()
        .map(|&n| integrate(spec, x0.clone(), n, SchedulerKind::Euler, 0.0, DEFAULT_O_MAX, &mut unused)?.max_abs_diff(&exact))
        .collect()
}

pub fn run_gaussian_oracle(cfg: &OracleConfig) -> Result<OracleReport> {
    if cfg.samples < 2 {
        return Err(Error::invalid("oracle needs at least 2 samples"));
    }
    let spec = GaussianFlowSpec::scalar(cfg.mu, cfg.sigma)?;
    let mut rng = SeededRng::new(cfg.seed);
    let x0 = column(rng.normals(cfg.samples))?;
    let end = integrate(&spec, x0, cfg.steps, cfg.scheduler, cfg.c, cfg.o_max, &mut rng)?;
    let xs = end.data();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = Normal::new(cfg.mu, cfg.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let (ks_d, ks_p) = if xs.len() >= 100 {
        let ks = ks_statistic(xs, |x| target.cdf(x))?;
        (ks.statistic, ks.p_value)
    } else {
        (f64::NAN, f64::NAN)
    };

    let starts: Vec<f64> = SeededRng::new(cfg.seed ^ 0x5eed).normals(64);
    let errors = euler_errors(&spec, &starts, &CONVERGENCE_STEPS)?;
    let ratios = errors.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(OracleReport {
        config: *cfg,
        mean,
        std,
        ks_statistic: ks_d,
        ks_p_value: ks_p,
        euler_errors: errors,
        euler_ratios: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_is_first_order() {
        let spec = GaussianFlowSpec::scalar(2.0, 0.5).unwrap();
        let errors = euler_errors(&spec, &[-1.5, -0.2, 0.4, 1.9], &CONVERGENCE_STEPS).unwrap();
        for w in errors.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..=2.3).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn small_run_reports_moments() {
        let cfg = OracleConfig {
            steps: 50,
            samples: 20_000,
            scheduler: SchedulerKind::Euler,
            ..OracleConfig::default()
        };
        let report = run_gaussian_oracle(&cfg).unwrap();
        assert!((report.mean - 2.0).abs() < 0.02);
        assert!((report.std - 0.5).abs() < 0.02);
        assert_eq!(report.euler_ratios.len(), 2);
    }

    #[test]
    fn zero_intensity_overshoot_matches_euler() {
        let spec = GaussianFlowSpec::scalar(1.0, 0.8).unwrap();
        let x = column(SeededRng::new(4).normals(500)).unwrap();
        let mut rng = SeededRng::new(5);
        let a = integrate(&spec, x.clone(), 30, SchedulerKind::Overshoot, 0.0, 1.0, &mut rng).unwrap();
        let b = integrate(&spec, x, 30, SchedulerKind::Euler, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(rng.draws(), 0);
    }

    // The advance is a first-order step, so the marginal bias at c = 1
    // shrinks as the grid is refined.
    #[test]
    fn overshoot_marginal_converges_with_refinement() {
        let run = |steps| {
            run_gaussian_oracle(&OracleConfig {
                steps,
                ..OracleConfig::default()
            })
            .unwrap()
        };
        let coarse = run(200);
        let fine = run(1000);
        assert!((fine.std - 0.5).abs() < (coarse.std - 0.5).abs() / 3.0, "{} vs {}", fine.std, coarse.std);
        assert!((fine.std - 0.5).abs() < 0.005 && (fine.mean - 2.0).abs() < 0.01);
        assert!(fine.ks_p_value > 0.01, "{fine:?}");
    }
}
