//! Closed-form failure-probability bounds and measurement conditions for
//! the δ-joint-typicality decoder, all evaluated in the log domain (nats).
//!
//! `β = S(M−K)/2` multiplies every exponent, so probabilities are never
//! formed until the final clamp to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::combin::{ln_binomial, log_add_exp};
use crate::ensemble::ProblemParams;
use crate::error::{Error, Result};

/// `log p(x) = β(log x − (x − 1))`, the optimized Chernoff exponent.
pub fn p_chernoff(x: f64, beta: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("p(x) needs x > 0 (got {x})")));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("p(x) needs beta > 0 (got {beta})")));
    }
    Ok(beta * (x.ln() - (x - 1.0)))
}

fn beta(p: &ProblemParams) -> f64 {
    (p.s * (p.m - p.k)) as f64 / 2.0
}

fn check_m_gt_k(p: &ProblemParams) -> Result<()> {
    if p.m <= p.k {
        return Err(Error::Domain(format!(
            "requires M > K (got M = {}, K = {})",
            p.m, p.k
        )));
    }
    Ok(())
}

/// `d1 = Mδ / ((M−K)σ²)`.
pub fn d1(p: &ProblemParams) -> f64 {
    p.m as f64 * p.delta() / ((p.m - p.k) as f64 * p.noise_var)
}

/// `d2(λ) = ((M−K)σ² + Mδ) / ((M−K)λ)`.
pub fn d2(p: &ProblemParams, lambda_min: f64) -> f64 {
    let mk = (p.m - p.k) as f64;
    (mk * p.noise_var + p.m as f64 * p.delta()) / (mk * lambda_min)
}

/// `α* = σ² + x_min²`.
pub fn alpha_star(p: &ProblemParams) -> f64 {
    p.noise_var + p.x_min_sq
}

/// `t = (1 − ρ⁻¹) / (1 + SNR_min⁻¹)`.
pub fn t_value(p: &ProblemParams) -> f64 {
    (1.0 - 1.0 / p.rho) / (1.0 + 1.0 / p.snr_min())
}

/// Upper end of the admissible δ interval for an incorrect support whose
/// covariance has smallest eigenvalue `lambda_min`: `(1 − K/M)(λ − σ²)`.
pub fn incorrect_delta_limit(p: &ProblemParams, lambda_min: f64) -> f64 {
    (1.0 - p.k as f64 / p.m as f64) * (lambda_min - p.noise_var)
}

/// Every derived quantity of one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub d1: f64,
    pub t: f64,
    pub alpha_star: f64,
    pub d2_alpha_star: f64,
    pub log_binom: f64,
    pub log_p_d1: f64,
    pub log_p_d2: f64,
    /// Raw log of `2p(d1) + C(N,K)p(d2,α*)`; may exceed 0.
    pub log_upper_perr: f64,
    /// `min(1, exp(log_upper_perr))`.
    pub upper_perr: f64,
    pub log_p1_exp: f64,
    pub log_p2_exp: f64,
    pub mu_i: f64,
    pub mu_j: f64,
    pub log_mu_i: f64,
    pub log_mu_j: f64,
    pub lower_perr: f64,
    pub m_necessary: f64,
    pub below_necessary_m: bool,
}

pub fn upper_bound_perr(p: &ProblemParams) -> Result<BoundReport> {
    p.validate()?;
    let delta = p.delta();
    let alpha = alpha_star(p);
    let limit = incorrect_delta_limit(p, alpha);
    if !(delta < limit) {
        return Err(Error::Precondition(format!(
            "incorrect-support bound needs 0 < delta < (1 - K/M)(lambda_min - sigma^2) = {limit} \
             with lambda_min = alpha* = sigma^2 + x_min^2, got delta = {delta}"
        )));
    }
    let b = beta(p);
    let d1v = d1(p);
    let d2v = d2(p, alpha);
    let log_p_d1 = p_chernoff(1.0 + d1v, b)?;
    let log_p_d2 = p_chernoff(d2v, b)?;
    let log_binom = ln_binomial(p.n, p.k);
    let log_upper_perr = log_add_exp(std::f64::consts::LN_2 + log_p_d1, log_binom + log_p_d2);
    let (log_p1_exp, log_p2_exp) = exp_ineq_bounds(p, p.x_min_sq, &vec![alpha; p.s])?;
    let (log_mu_i, log_mu_j) = log_mu_factors(p)?;
    let nec = necessary_m(p)?;
    Ok(BoundReport {
        delta,
        d1: d1v,
        t: t_value(p),
        alpha_star: alpha,
        d2_alpha_star: d2v,
        log_binom,
        log_p_d1,
        log_p_d2,
        log_upper_perr,
        upper_perr: log_upper_perr.exp().min(1.0),
        log_p1_exp,
        log_p2_exp,
        mu_i: log_mu_i.exp(),
        mu_j: log_mu_j.exp(),
        log_mu_i,
        log_mu_j,
        lower_perr: fano_lower_perr(p),
        m_necessary: nec.value,
        below_necessary_m: (p.m as f64) < nec.value,
    })
}

/// Exponential-inequality counterparts `(log p1_exp, log p2_exp)` for an
/// incorrect support with residual energy `x_min_j_sq` and per-vector
/// variances `alphas` (`α_{J,s} = σ² + ||x^s_{I\J}||²`).
pub fn exp_ineq_bounds(p: &ProblemParams, x_min_j_sq: f64, alphas: &[f64]) -> Result<(f64, f64)> {
    check_m_gt_k(p)?;
    let (m, k, s) = (p.m as f64, p.k as f64, p.s as f64);
    let delta = p.delta();
    let limit = (1.0 - k / m) * x_min_j_sq;
    if !(delta > 0.0 && delta < limit) {
        return Err(Error::Domain(format!(
            "exponential bound needs 0 < delta < (1 - K/M) x_min,J^2 = {limit}, got {delta}"
        )));
    }
    if alphas.len() != p.s || alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Domain(format!(
            "need S = {} positive alpha values, got {:?}",
            p.s, alphas
        )));
    }
    let s2 = p.noise_var;
    let log_p1 = -(s * delta * delta / (4.0 * s2 * s2)) * m * m / (m - k + 2.0 * delta * m / s2);
    let sum_sq: f64 = alphas.iter().map(|a| a * a).sum();
    let gap = x_min_j_sq - m * delta / (m - k);
    let log_p2 = -(s * s * (m - k) / (4.0 * sum_sq)) * gap * gap;
    Ok((log_p1, log_p2))
}

fn log_mu_factors(p: &ProblemParams) -> Result<(f64, f64)> {
    check_m_gt_k(p)?;
    let half = (p.m - p.k) as f64 / 2.0;
    let log_mu_i = p_chernoff(1.0 + d1(p), half)?;
    let log_mu_j = p_chernoff(d2(p, alpha_star(p)), half)?;
    Ok((log_mu_i, log_mu_j))
}

/// Per-vector contraction factors `(μ_I, μ_J)`.
pub fn mu_factors(p: &ProblemParams) -> Result<(f64, f64)> {
    let (a, b) = log_mu_factors(p)?;
    Ok((a.exp(), b.exp()))
}

/// Same as [`mu_factors`] but in the log domain.
pub fn log_mu(p: &ProblemParams) -> Result<(f64, f64)> {
    log_mu_factors(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `K/N` tends to a constant.
    Linear,
    /// `K/N` tends to zero.
    Sublinear,
}

fn checked_t(p: &ProblemParams) -> Result<f64> {
    let t = t_value(p);
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("requires t in (0, 1), got {t}")));
    }
    Ok(t)
}

/// `ν2 = −2 / (log(1−t) + t)`.
pub fn nu2(p: &ProblemParams) -> Result<f64> {
    let t = checked_t(p)?;
    Ok(-2.0 / ((-t).ln_1p() + t))
}

/// `ν1 = ν2 (1 − log(K/N))`.
pub fn nu1(p: &ProblemParams) -> Result<f64> {
    Ok(nu2(p)? * linear_factor(p))
}

fn linear_factor(p: &ProblemParams) -> f64 {
    1.0 - (p.k as f64 / p.n as f64).ln()
}

fn sublinear_factor(p: &ProblemParams) -> f64 {
    (p.n as f64 / p.k as f64).ln()
}

fn regime_factor(p: &ProblemParams, regime: Regime) -> f64 {
    match regime {
        Regime::Linear => linear_factor(p),
        Regime::Sublinear => sublinear_factor(p),
    }
}

/// Right-hand side of the sufficient measurement condition
/// `K + ν1 K/S` (linear) or `K + ν2 (K/S) log(N/K)` (sublinear).
pub fn sufficient_m(p: &ProblemParams, regime: Regime) -> Result<f64> {
    let (k, s) = (p.k as f64, p.s as f64);
    Ok(k + nu2(p)? * k / s * regime_factor(p, regime))
}

/// Loosened form with `ν2/S ≤ 4/(S t²)`.
pub fn sufficient_m_loose(p: &ProblemParams, regime: Regime) -> Result<f64> {
    let t = checked_t(p)?;
    let (k, s) = (p.k as f64, p.s as f64);
    Ok(k + 4.0 / (s * t * t) * k * regime_factor(p, regime))
}

/// `SNR_min` threshold `α / (1 − ρ⁻¹ − α)` for the high-SNR form.
pub fn high_snr_threshold(rho: f64, alpha: f64) -> Result<f64> {
    let cap = 1.0 - 1.0 / rho;
    if !(alpha > 0.0 && alpha < cap) {
        return Err(Error::Precondition(format!(
            "alpha must lie in (0, 1 - 1/rho) = (0, {cap}), got {alpha}"
        )));
    }
    Ok(alpha / (cap - alpha))
}

/// High-SNR form with factor `(S⁻¹ + (S·SNR)⁻¹)(4 − 2α)/((1 − ρ⁻¹)α)`.
pub fn sufficient_m_high_snr(p: &ProblemParams, alpha: f64, regime: Regime) -> Result<f64> {
    let threshold = high_snr_threshold(p.rho, alpha)?;
    let snr = p.snr_min();
    if snr < threshold {
        return Err(Error::Precondition(format!(
            "requires SNR_min >= alpha/(1 - 1/rho - alpha) = {threshold}, got {snr}"
        )));
    }
    let (k, s) = (p.k as f64, p.s as f64);
    let factor = (1.0 / s + 1.0 / (s * snr)) * (4.0 - 2.0 * alpha) / ((1.0 - 1.0 / p.rho) * alpha);
    Ok(k + factor * k * regime_factor(p, regime))
}

fn ln_binom_plus_two(p: &ProblemParams) -> f64 {
    log_add_exp(ln_binomial(p.n, p.k), std::f64::consts::LN_2)
}

/// Number of measurement vectors sufficient for `p_err < ε` at `M = K + 1`:
/// `(log(C(N,K) + 2) − log ε) · max(1/|log μ_I|, 1/|log μ_J|)`.
pub fn s_bound_k_plus_one(p: &ProblemParams, epsilon: f64) -> Result<f64> {
    if p.m != p.k + 1 {
        return Err(Error::Precondition(format!(
            "requires M = K + 1 (got M = {}, K = {})",
            p.m, p.k
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!(
            "requires epsilon in (0, 1), got {epsilon}"
        )));
    }
    let (lmi, lmj) = log_mu_factors(p)?;
    let inv = (1.0 / lmi.abs()).max(1.0 / lmj.abs());
    Ok((ln_binom_plus_two(p) - epsilon.ln()) * inv)
}

/// `SNR_min → ∞` limit of [`s_bound_k_plus_one`], where `log μ_I → −∞`
/// and `log μ_J → (1 − ρ⁻¹ − log ρ)/2`.
pub fn s_bound_k_plus_one_high_snr(p: &ProblemParams, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Precondition(format!(
            "requires epsilon in (0, 1), got {epsilon}"
        )));
    }
    Ok((ln_binom_plus_two(p) - epsilon.ln()) / log_mu_j_high_snr_limit(p.rho).abs())
}

/// `lim log μ_J = (1 − ρ⁻¹ − log ρ)/2` at `M = K + 1`.
pub fn log_mu_j_high_snr_limit(rho: f64) -> f64 {
    0.5 * (1.0 - 1.0 / rho - rho.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessaryM {
    pub value: f64,
    /// The numerator `2K log(N/K) − 2 log 2` is not positive.
    pub vacuous: bool,
}

/// `(2K log(N/K) − 2 log 2) / (S log(1 + K·SNR_min))`; any smaller `M`
/// keeps every decoder's worst-case failure probability away from zero.
pub fn necessary_m(p: &ProblemParams) -> Result<NecessaryM> {
    let (k, s) = (p.k as f64, p.s as f64);
    let ksnr = k * p.snr_min();
    if !(ksnr > 0.0) {
        return Err(Error::Domain(format!("requires K*SNR_min > 0, got {ksnr}")));
    }
    let num = 2.0 * k * (p.n as f64 / k).ln() - 2.0 * std::f64::consts::LN_2;
    if num <= 0.0 {
        return Ok(NecessaryM {
            value: 0.0,
            vacuous: true,
        });
    }
    Ok(NecessaryM {
        value: num / (s * ksnr.ln_1p()),
        vacuous: false,
    })
}

/// Fano lower bound at a possibly fractional measurement count `m`.
pub fn fano_lower_perr_at(n: usize, k: usize, s: usize, snr_min: f64, m: f64) -> f64 {
    let (k, s) = (k as f64, s as f64);
    let denom = k * (n as f64 / k).ln();
    if !(denom > 0.0) {
        return 0.0;
    }
    let info = 0.5 * s * m * (k * snr_min).ln_1p() + std::f64::consts::LN_2;
    (1.0 - info / denom).max(0.0)
}

/// `max(0, 1 − (SM log(1 + K·SNR_min)/2 + log 2) / (K log(N/K)))`.
pub fn fano_lower_perr(p: &ProblemParams) -> f64 {
    fano_lower_perr_at(p.n, p.k, p.s, p.snr_min(), p.m as f64)
}

/// Order-level comparison against the low-noise MMV condition
/// `K log N / min(K, S)`. Constants hidden by the Ω(·) statements are not
/// modelled, so only ratios and trends are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmvComparison {
    pub mmv_low_noise: f64,
    pub jsm2: f64,
    pub jsm2_additive: f64,
    pub ratio: f64,
    pub order_only: bool,
}

pub fn mmv_order_comparison(p: &ProblemParams) -> Result<MmvComparison> {
    if p.n <= p.k {
        return Err(Error::Domain(format!("requires N > K (got N = {}, K = {})", p.n, p.k)));
    }
    let (n, k, s) = (p.n as f64, p.k as f64, p.s as f64);
    let mmv = k * n.ln() / k.min(s);
    let additive = nu2(p)? / s * k * (n / k).ln();
    Ok(MmvComparison {
        mmv_low_noise: mmv,
        jsm2: k + additive,
        jsm2_additive: additive,
        ratio: (k + additive) / mmv,
        order_only: true,
    })
}

/// Measurement and vector-count conditions for one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub nu1: f64,
    pub nu2: f64,
    pub m_suff_linear: f64,
    pub m_suff_sublinear: f64,
    pub m_suff_loose_linear: f64,
    pub m_suff_loose_sublinear: f64,
    pub high_snr_alpha: f64,
    pub snr_threshold_high_snr: f64,
    /// `None` when `SNR_min` is below the high-SNR threshold.
    pub m_suff_high_snr_linear: Option<f64>,
    pub m_suff_high_snr_sublinear: Option<f64>,
    pub k_plus_one_epsilon: f64,
    /// Vector count for `p_err < ε` at `M = K + 1`.
    pub s_k_plus_one: f64,
    pub m_necessary: f64,
}

/// Default `α` for the high-SNR condition: the midpoint of `(0, 1 − ρ⁻¹)`.
pub fn default_high_snr_alpha(rho: f64) -> f64 {
    0.5 * (1.0 - 1.0 / rho)
}

pub const DEFAULT_K_PLUS_ONE_EPSILON: f64 = 0.01;

pub fn sufficiency_report(p: &ProblemParams, alpha: f64, epsilon: f64) -> Result<SufficiencyReport> {
    p.validate()?;
    let snr_threshold_high_snr = high_snr_threshold(p.rho, alpha)?;
    let high_snr_ok = p.snr_min() >= snr_threshold_high_snr;
    let mut at_limit = *p;
    at_limit.m = p.k + 1;
    at_limit.delta_override = None;
    Ok(SufficiencyReport {
        nu1: nu1(p)?,
        nu2: nu2(p)?,
        m_suff_linear: sufficient_m(p, Regime::Linear)?,
        m_suff_sublinear: sufficient_m(p, Regime::Sublinear)?,
        m_suff_loose_linear: sufficient_m_loose(p, Regime::Linear)?,
        m_suff_loose_sublinear: sufficient_m_loose(p, Regime::Sublinear)?,
        high_snr_alpha: alpha,
        snr_threshold_high_snr,
        m_suff_high_snr_linear: high_snr_ok
            .then(|| sufficient_m_high_snr(p, alpha, Regime::Linear))
            .transpose()?,
        m_suff_high_snr_sublinear: high_snr_ok
            .then(|| sufficient_m_high_snr(p, alpha, Regime::Sublinear))
            .transpose()?,
        k_plus_one_epsilon: epsilon,
        s_k_plus_one: s_bound_k_plus_one(&at_limit, epsilon)?,
        m_necessary: necessary_m(p)?.value,
    })
}

/// Flat CSV row joining a parameter point with its [`BoundReport`] and
/// [`SufficiencyReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub sigma2: f64,
    pub xmin2: f64,
    pub rho: f64,
    pub delta: f64,
    pub d1: f64,
    pub t: f64,
    pub d2: f64,
    pub log_binom: f64,
    pub log_p_d1: f64,
    pub log_p_d2: f64,
    pub log_upper: f64,
    pub upper: f64,
    pub lower: f64,
    pub log_p1_exp: f64,
    pub log_p2_exp: f64,
    pub mu_i: f64,
    pub mu_j: f64,
    pub m_necessary: f64,
    pub below_necessary_m: bool,
    pub nu1: f64,
    pub nu2: f64,
    pub m_suff_linear: f64,
    pub m_suff_sublinear: f64,
    pub m_suff_loose_linear: f64,
    pub m_suff_loose_sublinear: f64,
    pub high_snr_alpha: f64,
    pub snr_threshold_high_snr: f64,
    pub m_suff_high_snr_linear: Option<f64>,
    pub m_suff_high_snr_sublinear: Option<f64>,
    pub k_plus_one_epsilon: f64,
    pub s_k_plus_one: f64,
}

impl BoundRow {
    pub fn new(p: &ProblemParams, b: &BoundReport, r: &SufficiencyReport) -> Self {
        Self {
            n: p.n,
            k: p.k,
            m: p.m,
            s: p.s,
            sigma2: p.noise_var,
            xmin2: p.x_min_sq,
            rho: p.rho,
            delta: b.delta,
            d1: b.d1,
            t: b.t,
            d2: b.d2_alpha_star,
            log_binom: b.log_binom,
            log_p_d1: b.log_p_d1,
            log_p_d2: b.log_p_d2,
            log_upper: b.log_upper_perr,
            upper: b.upper_perr,
            lower: b.lower_perr,
            log_p1_exp: b.log_p1_exp,
            log_p2_exp: b.log_p2_exp,
            mu_i: b.mu_i,
            mu_j: b.mu_j,
            m_necessary: b.m_necessary,
            below_necessary_m: b.below_necessary_m,
            nu1: r.nu1,
            nu2: r.nu2,
            m_suff_linear: r.m_suff_linear,
            m_suff_sublinear: r.m_suff_sublinear,
            m_suff_loose_linear: r.m_suff_loose_linear,
            m_suff_loose_sublinear: r.m_suff_loose_sublinear,
            high_snr_alpha: r.high_snr_alpha,
            snr_threshold_high_snr: r.snr_threshold_high_snr,
            m_suff_high_snr_linear: r.m_suff_high_snr_linear,
            m_suff_high_snr_sublinear: r.m_suff_high_snr_sublinear,
            k_plus_one_epsilon: r.k_plus_one_epsilon,
            s_k_plus_one: r.s_k_plus_one,
        }
    }
}

/// Evaluates both reports with the default high-SNR and M = K + 1 settings.
pub fn bound_row(p: &ProblemParams) -> Result<BoundRow> {
    let b = upper_bound_perr(p)?;
    let r = sufficiency_report(p, default_high_snr_alpha(p.rho), DEFAULT_K_PLUS_ONE_EPSILON)?;
    Ok(BoundRow::new(p, &b, &r))
}
