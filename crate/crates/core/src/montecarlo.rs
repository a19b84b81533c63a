//! Seeded Monte Carlo runner for the decoder's failure events, with sweeps
//! and an empirical search for the smallest sufficient `M` built on top.
//!
//! Every random draw comes from a counter-based stream keyed by the master
//! seed and the (role, trial) pair, and per-trial tallies are integer
//! counts. Results therefore do not depend on how rayon schedules
//! the trials.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{fano_lower_perr, upper_bound_perr};
use crate::combin::binomial;
use crate::decoder::{decode_with_cap, typicality_stat, DEFAULT_ENUMERATION_CAP};
use crate::ensemble::{
    measure, sample_sensing, sample_sparse_ensemble, sample_support, AmplitudeMode,
    ProblemParams, SparseEnsemble, SupportSet,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, Role};

/// Two-sided 95% normal quantile used by the Wilson intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;

pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 7_340_021;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub params: ProblemParams,
    pub trials: usize,
    pub master_seed: u64,
    pub amplitude_mode: AmplitudeMode,
    /// Reuse one support and signal ensemble across all trials.
    pub fix_signal: bool,
    pub cap: u64,
}

impl TrialPlan {
    pub fn new(params: ProblemParams, trials: usize, master_seed: u64) -> Self {
        Self {
            params,
            trials,
            master_seed,
            amplitude_mode: AmplitudeMode::Fixed,
            fix_signal: true,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn with_amplitude(mut self, mode: AmplitudeMode) -> Self {
        self.amplitude_mode = mode;
        self
    }

    pub fn with_fix_signal(mut self, fix: bool) -> Self {
        self.fix_signal = fix;
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_params(&self, params: ProblemParams) -> Self {
        Self { params, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidParameter("requires trials >= 1".into()));
        }
        let count = binomial(self.params.n, self.params.k);
        if count > self.cap as f64 {
            return Err(Error::Budget {
                n: self.params.n,
                k: self.params.k,
                count,
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// Seed for draws of `role` in trial `trial`. With `fix_signal` the
    /// support and signal seeds ignore the trial index.
    pub fn trial_seed(&self, role: Role, trial: usize) -> u64 {
        let shared = self.fix_signal && matches!(role, Role::Support | Role::Signal);
        let index = if shared { u64::MAX } else { trial as u64 };
        derive_seed(self.master_seed, role, index, 0)
    }

    /// Support and signals for one trial.
    pub fn draw_signal(&self, trial: usize) -> Result<SparseEnsemble> {
        let p = &self.params;
        let support = sample_support(p.n, p.k, self.trial_seed(Role::Support, trial))?;
        sample_sparse_ensemble(
            &support,
            p.s,
            p.x_min_sq.sqrt(),
            self.amplitude_mode,
            self.trial_seed(Role::Signal, trial),
        )
    }
}

/// A proportion with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub successes: u64,
    pub trials: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EstimateWithCI {
    pub fn wilson(successes: u64, trials: u64) -> Self {
        assert!(trials > 0 && successes <= trials);
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = Z_95 * Z_95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Self {
            successes,
            trials,
            point: p,
            ci_low: (center - half).max(0.0).min(p),
            ci_high: (center + half).min(1.0).max(p),
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    event_failure: u64,
    decode_error: u64,
    correct_atypical: u64,
    incorrect_typical: u64,
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally {
            event_failure: self.event_failure + o.event_failure,
            decode_error: self.decode_error + o.decode_error,
            correct_atypical: self.correct_atypical + o.correct_atypical,
            incorrect_typical: self.incorrect_typical + o.incorrect_typical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    /// `E_I^c ∪ ⋃_J E_J`.
    pub event_failure: EstimateWithCI,
    pub decode_error: EstimateWithCI,
    /// `E_I^c` alone.
    pub correct_atypical: EstimateWithCI,
    /// Fraction of (trial, incorrect support) pairs that were typical.
    pub incorrect_typical_rate: EstimateWithCI,
    /// Mean number of typical incorrect supports per trial, an estimate of
    /// `Σ_J P{E_J}`.
    pub incorrect_typical_mean: f64,
}

pub fn run_trials(plan: &TrialPlan) -> Result<TrialSummary> {
    plan.validate()?;
    let p = &plan.params;
    let fixed = if plan.fix_signal { Some(plan.draw_signal(0)?) } else { None };
    let tally = (0..plan.trials)
        .into_par_iter()
        .map(|trial| -> Result<Tally> {
            let drawn;
            let x = match &fixed {
                Some(x) => x,
                None => {
                    drawn = plan.draw_signal(trial)?;
                    &drawn
                }
            };
            let f = sample_sensing(p.m, p.n, p.s, plan.trial_seed(Role::Sensing, trial))?;
            let y = measure(x, &f, p.noise_var, plan.trial_seed(Role::Noise, trial))?;
            let out = decode_with_cap(&y, &f, p, &x.support, plan.cap)?;
            Ok(Tally {
                event_failure: out.event_failure as u64,
                decode_error: out.decode_error as u64,
                correct_atypical: !out.correct_typical as u64,
                incorrect_typical: out.num_incorrect_typical,
            })
        })
        .try_reduce(Tally::default, |a, b| Ok(a + b))?;
    let n = plan.trials as u64;
    let wrong = binomial(p.n, p.k) as u64 - 1;
    Ok(TrialSummary {
        event_failure: EstimateWithCI::wilson(tally.event_failure, n),
        decode_error: EstimateWithCI::wilson(tally.decode_error, n),
        correct_atypical: EstimateWithCI::wilson(tally.correct_atypical, n),
        incorrect_typical_rate: EstimateWithCI::wilson(tally.incorrect_typical, (n * wrong).max(1)),
        incorrect_typical_mean: tally.incorrect_typical as f64 / n as f64,
    })
}

/// Samples of the raw typicality statistic `Σ_s ||Q(F^s_J) y^s||²` for the
/// signal ensemble `x` and a fixed candidate `j`, one per trial. Sensing
/// matrices and noise follow the plan's seeds.
pub fn statistic_samples(plan: &TrialPlan, x: &SparseEnsemble, j: &SupportSet) -> Result<Vec<f64>> {
    plan.params.validate()?;
    let p = &plan.params;
    if j.len() != p.k || j.ambient_dim() != p.n || x.count() != p.s || x.ambient_dim() != p.n {
        return Err(Error::InvalidDimension(format!(
            "candidate {j} and signals must match (N, K, S) = ({}, {}, {})",
            p.n, p.k, p.s
        )));
    }
    (0..plan.trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let f = sample_sensing(p.m, p.n, p.s, plan.trial_seed(Role::Sensing, trial))?;
            let y = measure(x, &f, p.noise_var, plan.trial_seed(Role::Noise, trial))?;
            Ok(typicality_stat(j, &y, &f, p.delta())?.value)
        })
        .collect()
}

/// Per-vector variances `α_s = σ² + ||x^s_{I∖J}||²` of the residual of `j`.
pub fn alphas_for(x: &SparseEnsemble, j: &SupportSet, noise_var: f64) -> Vec<f64> {
    x.vectors
        .iter()
        .map(|v| noise_var + x.support.difference(j).map(|i| v[i] * v[i]).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    M,
    S,
    Snr,
    N,
    K,
}

impl SweepAxis {
    pub fn value(self, p: &ProblemParams) -> f64 {
        match self {
            SweepAxis::M => p.m as f64,
            SweepAxis::S => p.s as f64,
            SweepAxis::Snr => p.snr_min(),
            SweepAxis::N => p.n as f64,
            SweepAxis::K => p.k as f64,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" => Ok(SweepAxis::M),
            "s" => Ok(SweepAxis::S),
            "snr" => Ok(SweepAxis::Snr),
            "n" => Ok(SweepAxis::N),
            "k" => Ok(SweepAxis::K),
            other => Err(Error::InvalidParameter(format!(
                "unknown axis '{other}', expected one of m, s, snr, n, k"
            ))),
        }
    }
}

/// One CSV row. Monte Carlo or bound columns are empty when that part of
/// the evaluation failed; `status` then carries the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub snr_min: f64,
    pub rho: f64,
    pub trials: usize,
    pub event_fail: Option<f64>,
    pub event_lo: Option<f64>,
    pub event_hi: Option<f64>,
    pub decode_err: Option<f64>,
    pub decode_lo: Option<f64>,
    pub decode_hi: Option<f64>,
    pub correct_atypical: Option<f64>,
    pub incorrect_typical_rate: Option<f64>,
    pub log_upper: Option<f64>,
    pub upper: Option<f64>,
    pub lower_fano: f64,
    pub status: String,
}

impl SweepRow {
    pub fn evaluate(plan: &TrialPlan) -> Self {
        let p = &plan.params;
        let mut row = SweepRow {
            n: p.n,
            k: p.k,
            m: p.m,
            s: p.s,
            snr_min: p.snr_min(),
            rho: p.rho,
            trials: plan.trials,
            event_fail: None,
            event_lo: None,
            event_hi: None,
            decode_err: None,
            decode_lo: None,
            decode_hi: None,
            correct_atypical: None,
            incorrect_typical_rate: None,
            log_upper: None,
            upper: None,
            lower_fano: fano_lower_perr(p),
            status: String::new(),
        };
        let mut problems = Vec::new();
        match run_trials(plan) {
            Ok(sum) => {
                row.event_fail = Some(sum.event_failure.point);
                row.event_lo = Some(sum.event_failure.ci_low);
                row.event_hi = Some(sum.event_failure.ci_high);
                row.decode_err = Some(sum.decode_error.point);
                row.decode_lo = Some(sum.decode_error.ci_low);
                row.decode_hi = Some(sum.decode_error.ci_high);
                row.correct_atypical = Some(sum.correct_atypical.point);
                row.incorrect_typical_rate = Some(sum.incorrect_typical_rate.point);
            }
            Err(e) => problems.push(format!("simulation: {e}")),
        }
        match upper_bound_perr(p) {
            Ok(b) => {
                row.log_upper = Some(b.log_upper_perr);
                row.upper = Some(b.upper_perr);
            }
            Err(e) => problems.push(format!("bound: {e}")),
        }
        row.status = if problems.is_empty() { "ok".into() } else { problems.join("; ") };
        row
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Evaluates every plan and orders the rows by the axis value. Failures are
/// recorded in the row status and do not stop the sweep.
pub fn sweep(plans: &[TrialPlan], axis: SweepAxis) -> Vec<SweepRow> {
    let mut keyed: Vec<(f64, SweepRow)> = plans
        .iter()
        .map(|plan| (axis.value(&plan.params), SweepRow::evaluate(plan)))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, row)| row).collect()
}

pub fn write_rows<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SWEEP_HEADER {
        return Err(Error::Io(format!("unexpected sweep header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const SWEEP_HEADER: [&str; 19] = [
    "n",
    "k",
    "m",
    "s",
    "snr_min",
    "rho",
    "trials",
    "event_fail",
    "event_lo",
    "event_hi",
    "decode_err",
    "decode_lo",
    "decode_hi",
    "correct_atypical",
    "incorrect_typical_rate",
    "log_upper",
    "upper",
    "lower_fano",
    "status",
];

/// Least-squares non-increasing fit by pool-adjacent-violators.
pub fn isotonic_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Blocks of (weighted mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// Isotonic trend check over a sequence of estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub fitted: Vec<f64>,
    pub max_residual: f64,
    pub max_half_width: f64,
    /// `max_residual < 2 · max_half_width`.
    pub non_increasing: bool,
}

pub fn trend_summary(estimates: &[EstimateWithCI]) -> TrendSummary {
    let values: Vec<f64> = estimates.iter().map(|e| e.point).collect();
    let weights = vec![1.0; values.len()];
    let fitted = isotonic_nonincreasing(&values, &weights);
    let max_residual = values
        .iter()
        .zip(&fitted)
        .map(|(v, f)| (v - f).abs())
        .fold(0.0, f64::max);
    let max_half_width = estimates.iter().map(|e| e.half_width()).fold(0.0, f64::max);
    TrendSummary {
        non_increasing: max_residual < 2.0 * max_half_width || max_residual == 0.0,
        fitted,
        max_residual,
        max_half_width,
    }
}

/// Trend over the successful rows of a sweep, in row order.
pub fn sweep_trend(rows: &[SweepRow]) -> TrendSummary {
    let estimates: Vec<EstimateWithCI> = rows
        .iter()
        .filter_map(|r| {
            let p = r.event_fail?;
            Some(EstimateWithCI::wilson((p * r.trials as f64).round() as u64, r.trials as u64))
        })
        .collect();
    trend_summary(&estimates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStar {
    /// Smallest qualifying `M`; `None` when saturated.
    pub m_star: Option<usize>,
    /// No `M ≤ N` reached the target.
    pub saturated: bool,
    /// A larger `M` was seen to fail after a smaller one succeeded.
    pub non_monotone: bool,
    /// Last failing and first passing `M` of the bisection.
    pub bracket: Option<(usize, usize)>,
    /// Every `(M, event_failure)` evaluated, sorted by `M`.
    pub evaluations: Vec<(usize, f64)>,
}

/// Bisection over `M ∈ [K+1, N]` for the smallest `M` whose estimated event
/// failure is at most `target`. All evaluations share the plan's seed.
pub fn find_m_star(template: &TrialPlan, target: f64) -> Result<MStar> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidRange(format!("target must lie in (0, 1], got {target}")));
    }
    let p = &template.params;
    let (lo_m, hi_m) = (p.k + 1, p.n);
    if lo_m > hi_m {
        return Err(Error::InvalidParameter(format!(
            "requires N > K (got N = {}, K = {})",
            p.n, p.k
        )));
    }
    let mut evals: Vec<(usize, f64)> = Vec::new();
    let mut eval = |m: usize| -> Result<bool> {
        let plan = template.with_params(p.with_m(m)?);
        let rate = run_trials(&plan)?.event_failure.point;
        evals.push((m, rate));
        Ok(rate <= target)
    };

    let result = |m_star, saturated, bracket, mut evals: Vec<(usize, f64)>| {
        evals.sort_by_key(|e| e.0);
        let non_monotone = evals.iter().enumerate().any(|(i, &(_, a))| {
            a <= target && evals[i + 1..].iter().any(|&(_, b)| b > target)
        });
        MStar { m_star, saturated, non_monotone, bracket, evaluations: evals }
    };

    if eval(lo_m)? {
        return Ok(result(Some(lo_m), false, None, evals));
    }
    if !eval(hi_m)? {
        return Ok(result(None, true, None, evals));
    }
    let (mut lo, mut hi) = (lo_m, hi_m);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(result(Some(hi), false, Some((lo, hi)), evals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    fn plan(n: usize, k: usize, m: usize, s: usize, snr: f64, trials: usize) -> TrialPlan {
        TrialPlan::new(ProblemParams::from_snr(n, k, m, s, snr).unwrap(), trials, 11)
    }

    #[test]
    fn wilson_interval() {
        let e = EstimateWithCI::wilson(0, 100);
        assert_eq!(e.point, 0.0);
        assert_eq!(e.ci_low, 0.0);
        // 1.96^2 / (100 + 1.96^2)
        assert_relative_eq!(e.ci_high, 0.036_993_498_206_985_68, max_relative = 1e-9);
        let e = EstimateWithCI::wilson(30, 100);
        assert!(e.ci_low < 0.3 && 0.3 < e.ci_high);
        assert_relative_eq!(e.ci_low, 0.218_948_852_949_327_6, max_relative = 1e-9);
        assert_relative_eq!(e.ci_high, 0.395_848_546_333_466_7, max_relative = 1e-9);
        let full = EstimateWithCI::wilson(7, 7);
        assert_eq!(full.ci_high, 1.0);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let p = plan(8, 2, 4, 1, 10.0, 1).with_fix_signal(false);
        let mut seen = HashSet::new();
        for t in 0..2_000 {
            for role in [Role::Support, Role::Signal, Role::Sensing, Role::Noise] {
                assert!(seen.insert(p.trial_seed(role, t)));
            }
        }
        let fixed = plan(8, 2, 4, 1, 10.0, 1);
        assert_eq!(fixed.trial_seed(Role::Signal, 0), fixed.trial_seed(Role::Signal, 99));
        assert_ne!(fixed.trial_seed(Role::Noise, 0), fixed.trial_seed(Role::Noise, 99));
    }

    #[test]
    fn run_is_independent_of_worker_count() {
        let pl = plan(8, 2, 4, 2, 10.0, 300).with_fix_signal(false);
        let a = run_trials(&pl).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| run_trials(&pl)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infinite_delta_always_fails() {
        let mut pl = plan(6, 2, 4, 1, 10.0, 50);
        pl.params = pl.params.with_delta(f64::INFINITY).unwrap();
        let sum = run_trials(&pl).unwrap();
        assert_eq!(sum.event_failure.point, 1.0);
        assert_eq!(sum.correct_atypical.point, 0.0);
        assert_eq!(sum.incorrect_typical_rate.point, 1.0);
        assert_eq!(sum.incorrect_typical_mean, 14.0);
    }

    #[test]
    fn high_snr_estimate_respects_bound() {
        let pl = plan(8, 2, 6, 4, 1e4, 1_000);
        let sum = run_trials(&pl).unwrap();
        let b = upper_bound_perr(&pl.params).unwrap();
        assert!(sum.event_failure.point <= b.upper_perr + sum.event_failure.half_width());
        assert!(sum.decode_error.point <= sum.event_failure.point);
    }

    #[test]
    fn budget_checked_before_trials() {
        let pl = plan(30, 10, 12, 1, 10.0, 1).with_cap(1000);
        assert!(matches!(run_trials(&pl), Err(Error::Budget { .. })));
        let mut zero = plan(8, 2, 4, 1, 10.0, 1);
        zero.trials = 0;
        assert!(run_trials(&zero).is_err());
    }

    #[test]
    fn alphas_count_missed_energy() {
        let pl = plan(8, 2, 4, 2, 10.0, 1);
        let x = pl.draw_signal(0).unwrap();
        let i = x.support.indices().to_vec();
        let same = alphas_for(&x, &x.support, 1.0);
        assert_eq!(same, vec![1.0, 1.0]);
        let other = (0..8).find(|c| !i.contains(c)).unwrap();
        let j = SupportSet::new(vec![i[0], other], 8).unwrap();
        for a in alphas_for(&x, &j, 1.0) {
            assert_relative_eq!(a, 11.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn pava_fits() {
        assert_eq!(isotonic_nonincreasing(&[3.0, 2.0, 1.0], &[1.0; 3]), vec![3.0, 2.0, 1.0]);
        assert_eq!(isotonic_nonincreasing(&[1.0, 3.0], &[1.0; 2]), vec![2.0, 2.0]);
        assert_eq!(
            isotonic_nonincreasing(&[5.0, 1.0, 2.0, 3.0, 0.0], &[1.0; 5]),
            vec![5.0, 2.0, 2.0, 2.0, 0.0]
        );
        assert!(isotonic_nonincreasing(&[], &[]).is_empty());
    }

    #[test]
    fn empty_sweep_and_row_order() {
        assert!(sweep(&[], SweepAxis::S).is_empty());
        let plans: Vec<TrialPlan> =
            [4, 1, 2].iter().map(|&s| plan(6, 2, 3, s, 100.0, 20)).collect();
        let rows = sweep(&plans, SweepAxis::S);
        assert_eq!(rows.iter().map(|r| r.s).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(rows.iter().all(SweepRow::is_ok));
    }

    #[test]
    fn sweep_records_partial_failures() {
        let ok = plan(6, 2, 4, 1, 10.0, 10);
        let broken = ok.with_params(ok.params.with_delta(100.0).unwrap()).with_cap(5);
        let rows = sweep(&[ok, broken], SweepAxis::M);
        assert!(rows[0].is_ok());
        assert!(rows[1].event_fail.is_none() && rows[1].log_upper.is_none());
        assert!(rows[1].status.contains("simulation") && rows[1].status.contains("bound"));
    }

    #[test]
    fn csv_round_trip_is_byte_stable() {
        let ok = plan(6, 2, 4, 1, 10.0, 10);
        let broken = ok.with_params(ok.params.with_delta(100.0).unwrap());
        let rows = sweep(&[ok, broken], SweepAxis::M);
        let mut first = Vec::new();
        write_rows(&rows, &mut first).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert!(text.starts_with("n,k,m,s,snr_min,rho,trials,event_fail,event_lo,event_hi,decode_err,"));
        let back = read_rows(first.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut second = Vec::new();
        write_rows(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn m_star_edge_cases() {
        let pl = plan(8, 2, 3, 8, 1e4, 200);
        let trivially = find_m_star(&pl, 1.0).unwrap();
        assert_eq!(trivially.m_star, Some(3));
        assert!(find_m_star(&pl, 0.0).is_err());
        let hard = plan(8, 2, 3, 1, 0.1, 200);
        let sat = find_m_star(&hard, 1e-3).unwrap();
        assert!(sat.saturated && sat.m_star.is_none());
    }

    #[test]
    fn m_star_high_snr_is_small() {
        let pl = plan(8, 2, 3, 8, 1e4, 500);
        let res = find_m_star(&pl, 0.5).unwrap();
        let m = res.m_star.unwrap();
        assert!(m <= 5, "{res:?}");
        assert!(!res.saturated);
    }
}
