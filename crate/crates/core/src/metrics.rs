//! Image metrics (MSE, PSNR, SSIM), text metrics (ACC, NED) and the
//! one-sample Kolmogorov–Smirnov test used to validate samplers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("mse over {} vs {} values", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / mse)` for unit peak, capped at 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Mean local SSIM of two single-channel planes with unit dynamic range.
///
/// Gaussian 11x11 window (sigma 1.5) evaluated at every fully contained
/// position; planes smaller than the window use the largest odd window that
/// fits.
pub fn ssim_plane(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height || width == 0 || height == 0 {
        return Err(Error::shape(format!("ssim planes must both be {width}x{height}")));
    }
    let fit = width.min(height);
    let size = if fit >= SSIM_WINDOW { SSIM_WINDOW } else if fit % 2 == 1 { fit } else { fit - 1 };
    let window = gaussian_window(size);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - size {
        for x0 in 0..=width - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..size {
                for wx in 0..size {
                    let w = window[wy * size + wx];
                    let i = (y0 + wy) * width + x0 + wx;
                    let (p, q) = (a[i], b[i]);
                    mx += w * p;
                    my += w * q;
                    sxx += w * p * p;
                    syy += w * q * q;
                    sxy += w * p * q;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM on the luminance of two images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape("ssim images differ in size"));
    }
    ssim_plane(&a.luminance(), &b.luminance(), a.width(), a.height())
}

pub fn image_mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape("mse images differ in size"));
    }
    mse(a.data(), b.data())
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `1 − lev(a, b) / max(|a|, |b|, 1)`; 1 means identical.
pub fn ned(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count()).max(1);
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Sup-distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() || samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("KS needs nonempty, NaN-free samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let series: f64 = (1..=6).map(|k| y.powi((2 * k - 1) * (2 * k - 1))).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * series).clamp(0.0, 1.0)
    } else {
        let series: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * series).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test with the asymptotic p-value (Stephens' small-sample
/// correction on the scaling).
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!("KS test needs >= 100 samples, got {}", samples.len())));
    }
    let d = ks_distance(samples, cdf)?;
    let sqrt_n = (samples.len() as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n: samples.len(),
    })
}

/// Mean metrics over a set of edits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub psnr: f64,
    pub mse: f64,
    pub acc: f64,
    pub ned: f64,
    pub count: usize,
}

/// Per-image metrics plus text metrics for one edit.
pub fn evaluate_pair(output: &Image, reference: &Image, recognized: Option<&str>, target_text: Option<&str>) -> Result<MetricReport> {
    let m = image_mse(output, reference)?;
    let (acc, ned_v) = match (recognized, target_text) {
        (Some(r), Some(t)) => (if r == t { 1.0 } else { 0.0 }, ned(r, t)),
        _ => (0.0, 0.0),
    };
    Ok(MetricReport {
        ssim: ssim(output, reference)?,
        psnr: psnr_from_mse(m),
        mse: m,
        acc,
        ned: ned_v,
        count: 1,
    })
}

impl MetricReport {
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        let n = reports.len();
        if n == 0 {
            return MetricReport::default();
        }
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
        MetricReport {
            ssim: avg(|r| r.ssim),
            psnr: avg(|r| r.psnr),
            mse: avg(|r| r.mse),
            acc: avg(|r| r.acc),
            ned: avg(|r| r.ned),
            count: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::SeededRng;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    // Textbook O(nm) edit distance.
    fn dp_levenshtein(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn mse_and_psnr() {
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(psnr(&[0.2], &[0.2]).unwrap(), 100.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = SeededRng::new(5);
        let x: Vec<f64> = rng.normals(20 * 16).iter().map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)).collect();
        assert!((ssim_plane(&x, &x, 20, 16).unwrap() - 1.0).abs() < 1e-9);
        let c = vec![0.4; 144];
        assert!((ssim_plane(&c, &c, 12, 12).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_inverted_step_edge_is_negative() {
        // 16x16, black left half, white right half: every 11x11 window straddles the edge
        let (w, h) = (16, 16);
        let x: Vec<f64> = (0..w * h).map(|i| if i % w < 8 { 0.0 } else { 1.0 }).collect();
        let inv: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_plane(&x, &inv, w, h).unwrap() < 0.0);
    }

    #[test]
    fn ned_values() {
        assert_eq!(ned("abc", "abc"), 1.0);
        assert_eq!(ned("kitten", "sitting"), 1.0 - 3.0 / 7.0);
        assert_eq!(ned("", ""), 1.0);
        assert_eq!(dp_levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn ks_hand_case() {
        // uniform CDF on four points: D = 0.15
        let d = ks_distance(&[0.1, 0.4, 0.6, 0.9], |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.15).abs() < 1e-15);
        assert!(ks_statistic(&[0.5; 10], |x| x).is_err());
    }

    #[test]
    fn kolmogorov_tail_values() {
        // reference values of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 5e-4);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 5e-4);
        assert!((kolmogorov_sf(0.5) - 0.9639).abs() < 5e-4);
        // both series agree near the switch point
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * 1.18f64.powi(2))).exp();
        let small: f64 = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / 1.18 * (1..=6).map(|k| y.powi((2 * k - 1) * (2 * k - 1))).sum::<f64>();
        assert!((small - kolmogorov_sf(1.18)).abs() < 1e-9);
    }

    #[test]
    fn ks_accepts_true_and_rejects_shifted_normal() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs = SeededRng::new(21).normals(100_000);
        let good = ks_statistic(&xs, |x| normal.cdf(x)).unwrap();
        assert!(good.p_value > 0.01, "{good:?}");
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        let bad = ks_statistic(&shifted, |x| normal.cdf(x)).unwrap();
        assert!(bad.p_value < 1e-6, "{bad:?}");
    }

    proptest! {
        #[test]
        fn levenshtein_agrees_with_dp_and_triangle(a in "[A-Z0-9]{0,8}", b in "[A-Z0-9]{0,8}", c in "[A-Z0-9]{0,8}") {
            let (ab, bc, ac) = (levenshtein(&a, &b), levenshtein(&b, &c), levenshtein(&a, &c));
            prop_assert_eq!(ab, dp_levenshtein(&a, &b));
            prop_assert!(ac <= ab + bc);
            prop_assert_eq!(ned(&a, &b), ned(&b, &a));
            prop_assert_eq!(ned(&a, &a), 1.0);
        }

        #[test]
        fn image_metrics_symmetric(seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let a: Vec<f64> = rng.normals(144).iter().map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)).collect();
            let b: Vec<f64> = rng.normals(144).iter().map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)).collect();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let (s1, s2) = (ssim_plane(&a, &b, 12, 12).unwrap(), ssim_plane(&b, &a, 12, 12).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        }
    }
}
