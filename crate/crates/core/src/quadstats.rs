//! Gaussian quadratic forms `Σ λ_i g_i²`: closed-form moments and MGFs,
//! plus an empirical check of the Laurent–Massart tail inequalities. These
//! serve as distributional oracles for the decoder and the bounds.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream, Role};

/// Standard normal quantile at 0.99.
pub const Z_99: f64 = 2.326_347_874_040_840_8;

/// `Q = Σ λ_i g_i²` with i.i.d. standard normal `g_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadFormSpec {
    pub eigenvalues: Vec<f64>,
}

impl QuadFormSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Domain(format!(
                "eigenvalues must be positive and finite: {eigenvalues:?}"
            )));
        }
        Ok(Self { eigenvalues })
    }

    /// Block-diagonal covariance `diag(α_1 I_d, …, α_S I_d)`.
    pub fn block_diagonal(alphas: &[f64], multiplicity: usize) -> Result<Self> {
        Self::new(
            alphas
                .iter()
                .flat_map(|&a| std::iter::repeat_n(a, multiplicity))
                .collect(),
        )
    }

    /// `tr R`.
    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `2 tr RᵀR`.
    pub fn variance(&self) -> f64 {
        2.0 * self.eigenvalues.iter().map(|l| l * l).sum::<f64>()
    }

    /// Fourth cumulant `48 Σ λ⁴`.
    pub fn fourth_cumulant(&self) -> f64 {
        48.0 * self.eigenvalues.iter().map(|l| l.powi(4)).sum::<f64>()
    }

    /// Asymptotic standard deviation of the sample variance over `n` draws.
    pub fn sample_variance_sd(&self, n: usize) -> f64 {
        let k2 = self.variance();
        ((self.fourth_cumulant() + 2.0 * k2 * k2) / n as f64).sqrt()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.eigenvalues
            .iter()
            .map(|&l| {
                let g: f64 = StandardNormal.sample(rng);
                l * g * g
            })
            .sum()
    }
}

/// `log E[exp(tQ)] = −½ Σ log(1 − 2tλ_i)`.
pub fn quadform_log_mgf(spec: &QuadFormSpec, t: f64) -> Result<f64> {
    let limit = 1.0 / (2.0 * spec.max_eigenvalue());
    if !(t < limit) {
        return Err(Error::Domain(format!(
            "MGF diverges for t >= 1/(2 max eigenvalue) = {limit}, got {t}"
        )));
    }
    Ok(-0.5 * spec.eigenvalues.iter().map(|&l| (-2.0 * t * l).ln_1p()).sum::<f64>())
}

pub fn quadform_mgf(spec: &QuadFormSpec, t: f64) -> Result<f64> {
    quadform_log_mgf(spec, t).map(f64::exp)
}

/// Mean and variance of `Z_I = Σ_s ||Q(F^s_I) y^s||² / σ²`.
pub fn z_i_moments(m: usize, k: usize, s: usize) -> Result<(f64, f64)> {
    if m <= k {
        return Err(Error::Domain(format!("requires M > K (got M = {m}, K = {k})")));
    }
    let d = (s * (m - k)) as f64;
    Ok((d, 2.0 * d))
}

/// Mean and variance of `Z_J` for per-vector variances `α_{J,s}`.
pub fn z_j_moments(alphas: &[f64], m: usize, k: usize) -> Result<(f64, f64)> {
    if m <= k {
        return Err(Error::Domain(format!("requires M > K (got M = {m}, K = {k})")));
    }
    let spec = QuadFormSpec::block_diagonal(alphas, m - k)?;
    Ok((spec.mean(), spec.variance()))
}

/// Running moments over a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
}

impl SampleMoments {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let (m2, m3) = xs.iter().fold((0.0, 0.0), |(a, b), &x| {
            let d = x - mean;
            (a + d * d, b + d * d * d)
        });
        let variance = m2 / (n - 1.0);
        let pop_var = m2 / n;
        Self {
            count: xs.len(),
            mean,
            variance,
            skewness: (m3 / n) / pop_var.powf(1.5),
        }
    }
}

const CHUNK: usize = 4096;

/// Draws `count` samples of `spec` in fixed chunks with derived seeds, so
/// the output does not depend on the worker count.
pub fn sample_quadform(spec: &QuadFormSpec, count: usize, seed: u64) -> Vec<f64> {
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, Role::Quadform, c as u64, 0);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(move |_| spec.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Sample mean of `exp(tQ)`.
pub fn empirical_mgf(samples: &[f64], t: f64) -> f64 {
    samples.iter().map(|&q| (t * q).exp()).sum::<f64>() / samples.len() as f64
}

/// One-sided 99% binomial margin around a tail probability `p` at `n` draws.
pub fn binomial_margin_99(p: f64, n: usize) -> f64 {
    Z_99 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical check of both Laurent–Massart tails for one `(α, x)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub x: f64,
    pub trials: usize,
    pub upper_threshold: f64,
    pub lower_threshold: f64,
    pub upper_rate: f64,
    pub lower_rate: f64,
    /// `e^{−x}`.
    pub bound: f64,
    pub margin: f64,
    pub upper_pass: bool,
    pub lower_pass: bool,
}

impl TailCheck {
    pub fn pass(&self) -> bool {
        self.upper_pass && self.lower_pass
    }
}

/// Samples `Y = Σ α_i (Y_i² − 1)` and checks
/// `P{Y ≥ 2|α|₂√x + 2|α|_∞ x} ≤ e^{−x}` and `P{Y ≤ −2|α|₂√x} ≤ e^{−x}`.
pub fn laurent_massart_check(alphas: &[f64], x: f64, trials: usize, seed: u64) -> Result<TailCheck> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("requires x > 0, got {x}")));
    }
    if trials < 1_000 {
        return Err(Error::Domain(format!("requires at least 1000 trials, got {trials}")));
    }
    if alphas.is_empty() || alphas.iter().any(|&a| !(a >= 0.0)) || alphas.iter().all(|&a| a == 0.0) {
        return Err(Error::Domain(format!(
            "weights must be non-negative and not all zero: {alphas:?}"
        )));
    }
    let norm2 = alphas.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_inf = alphas.iter().copied().fold(0.0, f64::max);
    let upper_threshold = 2.0 * norm2 * x.sqrt() + 2.0 * norm_inf * x;
    let lower_threshold = -2.0 * norm2 * x.sqrt();
    let total: f64 = alphas.iter().sum();

    // Zero weights contribute nothing; sample only the positive ones.
    let positive: Vec<f64> = alphas.iter().copied().filter(|&a| a > 0.0).collect();
    let spec = QuadFormSpec::new(positive)?;
    let samples = sample_quadform(&spec, trials, seed);
    let (mut up, mut down) = (0usize, 0usize);
    for q in samples {
        let y = q - total;
        if y >= upper_threshold {
            up += 1;
        }
        if y <= lower_threshold {
            down += 1;
        }
    }
    let bound = (-x).exp();
    let margin = binomial_margin_99(bound, trials);
    let upper_rate = up as f64 / trials as f64;
    let lower_rate = down as f64 / trials as f64;
    Ok(TailCheck {
        x,
        trials,
        upper_threshold,
        lower_threshold,
        upper_rate,
        lower_rate,
        bound,
        margin,
        upper_pass: upper_rate <= bound + margin,
        lower_pass: lower_rate <= bound + margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mgf_basics() {
        let spec = QuadFormSpec::new(vec![1.0; 7]).unwrap();
        assert_eq!(quadform_mgf(&spec, 0.0).unwrap(), 1.0);
        assert_relative_eq!(quadform_mgf(&spec, 0.1).unwrap(), 0.8f64.powf(-3.5), max_relative = 1e-14);
        assert!(quadform_mgf(&spec, 0.5).is_err());
        assert!(quadform_mgf(&spec, -3.0).unwrap() < 1.0);
    }

    #[test]
    fn homogeneous_block_reduces_to_chi_square_mgf() {
        let (m, k, s) = (6, 2, 3);
        let spec = QuadFormSpec::block_diagonal(&[1.0; 3], m - k).unwrap();
        for t in [-1.0f64, 0.05, 0.2, 0.45] {
            let closed = (1.0 - 2.0 * t).powf(-((s * (m - k)) as f64) / 2.0);
            assert_relative_eq!(quadform_mgf(&spec, t).unwrap(), closed, max_relative = 1e-13);
        }
    }

    #[test]
    fn empirical_mgf_matches_closed_form() {
        let spec = QuadFormSpec::new(vec![0.5, 1.0, 2.0, 2.0, 3.0]).unwrap();
        let t = 0.05 / spec.max_eigenvalue();
        let samples = sample_quadform(&spec, 1_000_000, 17);
        let emp = empirical_mgf(&samples, t);
        let exact = quadform_mgf(&spec, t).unwrap();
        assert!((emp / exact - 1.0).abs() < 0.01, "{emp} vs {exact}");
    }

    #[test]
    fn moment_formulas() {
        assert_eq!(z_i_moments(3, 2, 1).unwrap(), (1.0, 2.0));
        assert_eq!(z_i_moments(8, 2, 4).unwrap(), (24.0, 48.0));
        assert!(z_i_moments(2, 2, 1).is_err());
        assert_eq!(z_j_moments(&[1.0, 3.0], 4, 2).unwrap(), (8.0, 40.0));
        let sigma2 = 2.5;
        let (mj, vj) = z_j_moments(&[sigma2; 4], 7, 3).unwrap();
        let (mi, vi) = z_i_moments(7, 3, 4).unwrap();
        assert_relative_eq!(mj, sigma2 * mi);
        assert_relative_eq!(vj, sigma2 * sigma2 * vi);
    }

    #[test]
    fn sampled_moments_within_bands() {
        let spec = QuadFormSpec::block_diagonal(&[1.0, 4.0, 0.5], 3).unwrap();
        let n = 200_000;
        let samples = sample_quadform(&spec, n, 3);
        let mom = SampleMoments::from_slice(&samples);
        assert!((mom.mean - spec.mean()).abs() < 5.0 * (spec.variance() / n as f64).sqrt());
        assert!((mom.variance - spec.variance()).abs() < 5.0 * spec.sample_variance_sd(n));
        assert!(mom.skewness > 0.0);
    }

    #[test]
    fn sampling_is_chunk_deterministic() {
        let spec = QuadFormSpec::new(vec![1.0, 2.0]).unwrap();
        let a = sample_quadform(&spec, 10_000, 5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| sample_quadform(&spec, 10_000, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn laurent_massart_tails() {
        let deep = laurent_massart_check(&[1.0, 2.0, 3.0], 20.0, 10_000, 1).unwrap();
        assert_eq!(deep.upper_rate, 0.0);
        assert_eq!(deep.lower_rate, 0.0);
        assert!(deep.pass());
        let flat = laurent_massart_check(&[1.0; 10], 1.0, 100_000, 2).unwrap();
        assert!(flat.pass(), "{flat:?}");
        let spike = laurent_massart_check(&[1.0, 0.0, 0.0, 0.0], 1.0, 100_000, 3).unwrap();
        assert!(spike.pass(), "{spike:?}");
        assert!(laurent_massart_check(&[1.0], 0.0, 10_000, 0).is_err());
        assert!(laurent_massart_check(&[1.0], 1.0, 10, 0).is_err());
    }
}
