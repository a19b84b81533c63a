//! Self-check suite behind the `verify` subcommand. Analytic checks run on
//! random parameter tuples; sampled checks compare the typicality
//! statistics and Gaussian tails against their closed forms.

use rand::Rng;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::bounds::{d1, d2, exp_ineq_bounds, log_mu, p_chernoff};
use crate::ensemble::{ProblemParams, SupportSet};
use crate::error::Result;
use crate::montecarlo::{alphas_for, statistic_samples, TrialPlan};
use crate::quadstats::{laurent_massart_check, quadform_mgf, QuadFormSpec, SampleMoments};
use crate::seed::{derive_seed, stream, Role};

/// Absolute slack for the log-domain dominance comparisons.
pub const DOMINANCE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub check: String,
    pub case: String,
    pub observed: f64,
    pub limit: f64,
    pub pass: bool,
}

impl VerifyRow {
    fn new(check: &str, case: impl Into<String>, observed: f64, limit: f64, pass: bool) -> Self {
        Self { check: check.into(), case: case.into(), observed, limit, pass }
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random valid parameter tuple with the ρ rule for δ.
pub fn random_params<R: Rng>(rng: &mut R) -> ProblemParams {
    let k = rng.random_range(1..=20);
    let m = rng.random_range(k + 1..=k + 60);
    let n = rng.random_range(m..=m + 500);
    let s = rng.random_range(1..=64);
    let noise_var = log_uniform(rng, 1e-2, 1e2);
    let snr = log_uniform(rng, 1e-2, 1e4);
    let rho = rng.random_range(1.05..20.0);
    ProblemParams::new(n, k, m, s, noise_var, snr * noise_var)
        .and_then(|p| p.with_rho(rho))
        .expect("generator produces valid tuples")
}

/// Worst excess of `log p(1+d1)` over `log p1_exp` across `count` tuples,
/// with the number of violations.
pub fn true_support_dominance(count: usize, seed: u64) -> Result<(usize, f64)> {
    let mut rng = stream(seed, Role::Grid, 1, 0);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let p = random_params(&mut rng);
        let beta = (p.s * (p.m - p.k)) as f64 / 2.0;
        let chernoff = p_chernoff(1.0 + d1(&p), beta)?;
        let alphas = vec![p.noise_var + p.x_min_sq; p.s];
        let (exp1, _) = exp_ineq_bounds(&p, p.x_min_sq, &alphas)?;
        let excess = chernoff - exp1;
        worst = worst.max(excess);
        if excess > DOMINANCE_SLACK {
            violations += 1;
        }
    }
    Ok((violations, worst))
}

/// Same for `log p(d2)` against `log p2_exp`, with heterogeneous
/// per-vector variances whose smallest member sets `x_{min,J}²`.
pub fn incorrect_support_dominance(count: usize, seed: u64) -> Result<(usize, f64)> {
    let mut rng = stream(seed, Role::Grid, 2, 0);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let p = random_params(&mut rng);
        let x_j_sq = p.x_min_sq * rng.random_range(1.0..4.0);
        let mut alphas: Vec<f64> = (0..p.s)
            .map(|_| p.noise_var + x_j_sq * rng.random_range(1.0..3.0))
            .collect();
        alphas[rng.random_range(0..p.s)] = p.noise_var + x_j_sq;
        let lambda_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
        let beta = (p.s * (p.m - p.k)) as f64 / 2.0;
        let chernoff = p_chernoff(d2(&p, lambda_min), beta)?;
        let (_, exp2) = exp_ineq_bounds(&p, x_j_sq, &alphas)?;
        let excess = chernoff - exp2;
        worst = worst.max(excess);
        if excess > DOMINANCE_SLACK {
            violations += 1;
        }
    }
    Ok((violations, worst))
}

/// Number of tuples with `μ_I ≥ 1` or `μ_J ≥ 1`.
pub fn contraction_violations(count: usize, seed: u64) -> Result<usize> {
    let mut rng = stream(seed, Role::Grid, 3, 0);
    let mut bad = 0;
    for _ in 0..count {
        let (a, b) = log_mu(&random_params(&mut rng))?;
        bad += (a >= 0.0 || b >= 0.0) as usize;
    }
    Ok(bad)
}

/// Weight vectors for the tail checks.
pub fn tail_cases() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("homogeneous", vec![1.0; 12]),
        ("heterogeneous", vec![0.25, 0.5, 1.0, 1.0, 2.0, 4.0, 8.0, 0.0]),
    ]
}

pub const TAIL_XS: [f64; 3] = [0.5, 1.0, 2.0];

/// Moments of the true-support statistic against `(S(M−K), 2S(M−K))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub label: String,
    pub sample: SampleMoments,
    pub mean: f64,
    pub variance: f64,
    pub mean_sd: f64,
    pub variance_sd: f64,
}

impl MomentCheck {
    fn new(label: String, values: &[f64], spec: &QuadFormSpec) -> Self {
        let n = values.len();
        Self {
            label,
            sample: SampleMoments::from_slice(values),
            mean: spec.mean(),
            variance: spec.variance(),
            mean_sd: (spec.variance() / n as f64).sqrt(),
            variance_sd: spec.sample_variance_sd(n),
        }
    }

    pub fn mean_z(&self) -> f64 {
        (self.sample.mean - self.mean) / self.mean_sd
    }

    pub fn variance_z(&self) -> f64 {
        (self.sample.variance - self.variance) / self.variance_sd
    }
}

/// `Z_I` samples at `(N, K, M, S, σ²)` normalised by `σ²`, with the matching
/// moment check.
pub fn z_i_samples(params: &ProblemParams, trials: usize, seed: u64) -> Result<(Vec<f64>, MomentCheck)> {
    let plan = TrialPlan::new(*params, trials, seed);
    let x = plan.draw_signal(0)?;
    let raw = statistic_samples(&plan, &x, &x.support)?;
    let values: Vec<f64> = raw.iter().map(|v| v / params.noise_var).collect();
    let spec = QuadFormSpec::block_diagonal(&vec![1.0; params.s], params.m - params.k)?;
    let check = MomentCheck::new("Z_I".into(), &values, &spec);
    Ok((values, check))
}

/// Moment checks of `Z_J` for `count` random incorrect supports.
pub fn z_j_checks(params: &ProblemParams, count: usize, trials: usize, seed: u64) -> Result<Vec<MomentCheck>> {
    let plan = TrialPlan::new(*params, trials, seed);
    let x = plan.draw_signal(0)?;
    let mut rng = stream(seed, Role::Grid, 4, 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = SupportSet::new(index::sample(&mut rng, params.n, params.k).into_vec(), params.n)?;
        if j == x.support {
            continue;
        }
        // Same signal ensemble, fresh matrices and noise per support.
        let sub = TrialPlan::new(*params, trials, derive_seed(seed, Role::Grid, 5, out.len() as u64));
        let values = statistic_samples(&sub, &x, &j)?;
        let alphas = alphas_for(&x, &j, params.noise_var);
        let spec = QuadFormSpec::block_diagonal(&alphas, params.m - params.k)?;
        out.push(MomentCheck::new(format!("Z_J J={j}"), &values, &spec));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub tuples: usize,
    pub tail_samples: usize,
    pub moment_trials: usize,
}

impl VerifyConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed, tuples: 1_000, tail_samples: 100_000, moment_trials: 100_000 }
    }
}

pub const MOMENT_SIGMAS: f64 = 5.0;
pub const MGF_T: f64 = 0.1;
pub const MGF_TOLERANCE: f64 = 0.02;

/// Runs every check and returns one row per check.
pub fn run_verify(cfg: &VerifyConfig) -> Result<Vec<VerifyRow>> {
    let mut rows = Vec::new();
    let seed = |i| derive_seed(cfg.seed, Role::Grid, 100 + i, 0);

    let (v1, w1) = true_support_dominance(cfg.tuples, seed(1))?;
    rows.push(VerifyRow::new("chernoff_vs_exp_true", format!("{} tuples, worst excess {w1:.3e}", cfg.tuples), v1 as f64, 0.0, v1 == 0));
    let (v2, w2) = incorrect_support_dominance(cfg.tuples, seed(2))?;
    rows.push(VerifyRow::new("chernoff_vs_exp_incorrect", format!("{} tuples, worst excess {w2:.3e}", cfg.tuples), v2 as f64, 0.0, v2 == 0));
    let vm = contraction_violations(cfg.tuples, seed(3))?;
    rows.push(VerifyRow::new("contraction_below_one", format!("{} tuples", cfg.tuples), vm as f64, 0.0, vm == 0));

    for (ci, (name, alphas)) in tail_cases().into_iter().enumerate() {
        for (xi, &x) in TAIL_XS.iter().enumerate() {
            let c = laurent_massart_check(&alphas, x, cfg.tail_samples, seed(10 + 3 * ci as u64 + xi as u64))?;
            let limit = c.bound + c.margin;
            rows.push(VerifyRow::new("tail_upper", format!("{name} x={x}"), c.upper_rate, limit, c.upper_pass));
            rows.push(VerifyRow::new("tail_lower", format!("{name} x={x}"), c.lower_rate, limit, c.lower_pass));
        }
    }

    let zi_params = ProblemParams::new(8, 2, 6, 3, 1.0, 10.0)?;
    let (values, zi) = z_i_samples(&zi_params, cfg.moment_trials, seed(20))?;
    rows.extend(moment_rows(&zi));
    let spec = QuadFormSpec::block_diagonal(&[1.0; 3], 4)?;
    let exact = quadform_mgf(&spec, MGF_T)?;
    let empirical = values.iter().map(|z| (MGF_T * z).exp()).sum::<f64>() / values.len() as f64;
    let rel = (empirical / exact - 1.0).abs();
    rows.push(VerifyRow::new("z_i_mgf", format!("t={MGF_T}, exact {exact:.6}, empirical {empirical:.6}"), rel, MGF_TOLERANCE, rel <= MGF_TOLERANCE));

    for check in z_j_checks(&zi_params, 5, cfg.moment_trials, seed(21))? {
        rows.extend(moment_rows(&check));
    }
    Ok(rows)
}

fn moment_rows(c: &MomentCheck) -> [VerifyRow; 2] {
    let (mz, vz) = (c.mean_z(), c.variance_z());
    [
        VerifyRow::new("moment_mean", format!("{} expected {:.4}, got {:.4}", c.label, c.mean, c.sample.mean), mz.abs(), MOMENT_SIGMAS, mz.abs() <= MOMENT_SIGMAS),
        VerifyRow::new("moment_variance", format!("{} expected {:.4}, got {:.4}", c.label, c.variance, c.sample.variance), vz.abs(), MOMENT_SIGMAS, vz.abs() <= MOMENT_SIGMAS),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_params_are_valid_and_admissible() {
        let mut rng = stream(1, Role::Grid, 0, 0);
        for _ in 0..500 {
            let p = random_params(&mut rng);
            p.validate().unwrap();
            crate::bounds::upper_bound_perr(&p).unwrap();
        }
    }

    #[test]
    fn small_suite_passes() {
        let cfg = VerifyConfig { seed: 3, tuples: 200, tail_samples: 20_000, moment_trials: 20_000 };
        let rows = run_verify(&cfg).unwrap();
        assert_eq!(rows.len(), 3 + 12 + 3 + 10);
        for r in &rows {
            assert!(r.pass, "{r:?}");
        }
    }
}
