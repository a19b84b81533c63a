//! Orthogonal projection residuals, the δ-joint-typicality test and the
//! exhaustive support decoder.
//!
//! Residuals `||Q(F_J) y||²` are always computed from an orthonormal basis
//! of `span(F_J)` built by modified Gram–Schmidt with selective
//! reorthogonalization. The decoder walks all `C(N, K)` supports depth
//! first in lexicographic order, so bases for shared prefixes are built once.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::combin::{binomial, next_combination};
use crate::ensemble::{MeasurementEnsemble, ProblemParams, SensingEnsemble, SupportSet};
use crate::error::{Error, Result};

/// Relative tolerance on the orthonormal-factor diagonal below which a
/// column block is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Largest number of candidate supports the exhaustive decoder will visit.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

// Kahan–Parlett: a second Gram–Schmidt pass is needed only when the first
// one cancelled more than this fraction of the column norm.
const REORTH_RATIO: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Thin QR factor of a growing column block: orthonormal `Q` and upper
/// triangular `R`, both stored column-major.
#[derive(Debug, Clone)]
pub(crate) struct OrthoBasis {
    m: usize,
    cap: usize,
    len: usize,
    q: Vec<f64>,
    r: Vec<f64>,
    scratch: Vec<f64>,
}

impl OrthoBasis {
    pub(crate) fn new(m: usize, cap: usize) -> Self {
        Self {
            m,
            cap,
            len: 0,
            q: vec![0.0; m * cap],
            r: vec![0.0; cap * cap],
            scratch: vec![0.0; m],
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    #[inline]
    fn q_col(&self, i: usize) -> &[f64] {
        &self.q[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    fn r_at(&self, row: usize, col: usize) -> f64 {
        self.r[col * self.cap + row]
    }

    /// Appends a column. Returns `false`, leaving the basis untouched, when
    /// the extended block would be numerically rank deficient.
    pub(crate) fn push(&mut self, column: &[f64]) -> bool {
        debug_assert!(self.len < self.cap);
        let k = self.len;
        let m = self.m;
        let mut v = std::mem::take(&mut self.scratch);
        v.copy_from_slice(column);
        let mut coeffs = [0.0f64; 64];
        let use_stack = k <= coeffs.len();
        let mut heap_coeffs = if use_stack { Vec::new() } else { vec![0.0; k] };
        let coeffs: &mut [f64] = if use_stack {
            &mut coeffs[..k]
        } else {
            &mut heap_coeffs[..]
        };

        let norm_before = dot(&v, &v).sqrt();
        for (i, c) in coeffs.iter_mut().enumerate() {
            let qi = &self.q[i * m..(i + 1) * m];
            let h = dot(qi, &v);
            axpy(-h, qi, &mut v);
            *c = h;
        }
        let mut norm = dot(&v, &v).sqrt();
        if k > 0 && norm < REORTH_RATIO * norm_before {
            for (i, c) in coeffs.iter_mut().enumerate() {
                let qi = &self.q[i * m..(i + 1) * m];
                let h = dot(qi, &v);
                axpy(-h, qi, &mut v);
                *c += h;
            }
            norm = dot(&v, &v).sqrt();
        }

        let mut dmax = norm;
        let mut dmin = norm;
        for i in 0..k {
            let d = self.r_at(i, i).abs();
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        if !(norm > 0.0) || !norm.is_finite() || dmin < RANK_TOL * dmax {
            self.scratch = v;
            return false;
        }

        let inv = 1.0 / norm;
        let dst = &mut self.q[k * m..(k + 1) * m];
        for (d, x) in dst.iter_mut().zip(&v) {
            *d = x * inv;
        }
        for (i, &c) in coeffs.iter().enumerate() {
            self.r[k * self.cap + i] = c;
        }
        self.r[k * self.cap + k] = norm;
        self.len += 1;
        self.scratch = v;
        true
    }

    pub(crate) fn pop(&mut self) {
        debug_assert!(self.len > 0);
        self.len -= 1;
    }

    /// Removes from `r` its component along basis vector `i`.
    #[inline]
    pub(crate) fn deflate(&self, i: usize, r: &mut [f64]) {
        let qi = self.q_col(i);
        let h = dot(qi, r);
        axpy(-h, qi, r);
    }

    /// `||y - Q Qᵀ y||²`, evaluated on the explicit residual vector.
    pub(crate) fn residual_energy(&self, y: &[f64]) -> f64 {
        let mut r = y.to_vec();
        for i in 0..self.len {
            self.deflate(i, &mut r);
        }
        dot(&r, &r).max(0.0)
    }

    /// Least-squares coefficients: solves `R z = Qᵀ y` by back substitution.
    pub(crate) fn solve(&self, y: &[f64]) -> Vec<f64> {
        let k = self.len;
        let mut z: Vec<f64> = (0..k).map(|i| dot(self.q_col(i), y)).collect();
        for i in (0..k).rev() {
            let tail: f64 = (i + 1..k).map(|j| self.r_at(i, j) * z[j]).sum();
            z[i] = (z[i] - tail) / self.r_at(i, i);
        }
        z
    }
}

fn basis_for(f_j: &DMatrix<f64>) -> Result<OrthoBasis> {
    let (m, k) = f_j.shape();
    let mut basis = OrthoBasis::new(m, k);
    for c in 0..k {
        let col = &f_j.as_slice()[c * m..(c + 1) * m];
        if !basis.push(col) {
            return Err(Error::RankDeficient {
                rank: basis.len(),
                expected: k,
            });
        }
    }
    Ok(basis)
}

/// `||Q(F_J) y||²` with `Q(F) = I − F(FᵀF)⁻¹Fᵀ`.
pub fn projection_residual(f_j: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if f_j.nrows() != y.len() {
        return Err(Error::InvalidDimension(format!(
            "block has {} rows but y has length {}",
            f_j.nrows(),
            y.len()
        )));
    }
    if f_j.ncols() > f_j.nrows() {
        return Err(Error::RankDeficient {
            rank: f_j.nrows(),
            expected: f_j.ncols(),
        });
    }
    Ok(basis_for(f_j)?.residual_energy(y.as_slice()))
}

/// Joint typicality statistic of one candidate support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypicalityStat {
    /// `Σ_s ||Q(F^s_J) y^s||²`; `NaN` when some `F^s_J` is rank deficient.
    pub value: f64,
    /// `value − S(M−K)σ²`.
    pub centered: f64,
    /// `S·M·δ`.
    pub threshold: f64,
    pub full_rank: bool,
}

impl TypicalityStat {
    fn new(value: f64, s: usize, m: usize, k: usize, noise_var: f64, delta: f64) -> Self {
        let centered = value - (s * (m - k)) as f64 * noise_var;
        Self {
            value,
            centered,
            threshold: (s * m) as f64 * delta,
            full_rank: true,
        }
    }

    fn rank_deficient(s: usize, m: usize, delta: f64) -> Self {
        Self {
            value: f64::NAN,
            centered: f64::NAN,
            threshold: (s * m) as f64 * delta,
            full_rank: false,
        }
    }

    pub fn is_typical(&self) -> bool {
        self.full_rank && self.centered.abs() < self.threshold
    }
}

fn check_shapes(y: &MeasurementEnsemble, f: &SensingEnsemble) -> Result<()> {
    if y.count() != f.count() {
        return Err(Error::InvalidDimension(format!(
            "{} measurement vectors but {} sensing matrices",
            y.count(),
            f.count()
        )));
    }
    if y.measurements.iter().any(|v| v.len() != f.rows()) {
        return Err(Error::InvalidDimension(format!(
            "measurement length differs from M = {}",
            f.rows()
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "requires delta > 0 (got {delta})"
        )));
    }
    Ok(())
}

pub fn typicality_stat(
    j: &SupportSet,
    y: &MeasurementEnsemble,
    f: &SensingEnsemble,
    delta: f64,
) -> Result<TypicalityStat> {
    check_shapes(y, f)?;
    check_delta(delta)?;
    let (m, k, s) = (f.rows(), j.len(), f.count());
    if k >= m {
        return Err(Error::InvalidParameter(format!(
            "requires M > K (got M = {m}, K = {k})"
        )));
    }
    if j.ambient_dim() != f.cols() {
        return Err(Error::InvalidDimension(format!(
            "support lives in N = {} but matrices have {} columns",
            j.ambient_dim(),
            f.cols()
        )));
    }
    let mut value = 0.0;
    for (sidx, ys) in y.measurements.iter().enumerate() {
        let mut basis = OrthoBasis::new(m, k);
        for &col in j.indices() {
            if !basis.push(f.column(sidx, col)) {
                return Ok(TypicalityStat::rank_deficient(s, m, delta));
            }
        }
        value += basis.residual_energy(ys.as_slice());
    }
    Ok(TypicalityStat::new(value, s, m, k, y.noise_var, delta))
}

/// Result of one exhaustive decoding pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub decoded: Option<SupportSet>,
    /// The true support is δ jointly typical (complement of `E_I^c`).
    pub correct_typical: bool,
    /// Number of incorrect supports that are δ jointly typical.
    pub num_incorrect_typical: u64,
    /// `E_I^c ∪ ⋃_J E_J` occurred.
    pub event_failure: bool,
    /// The selected support differs from the truth.
    pub decode_error: bool,
}

/// Visits every `K`-subset of the columns in lexicographic order together
/// with its typicality statistic.
pub fn scan_supports<V>(
    y: &MeasurementEnsemble,
    f: &SensingEnsemble,
    k: usize,
    delta: f64,
    cap: u64,
    mut visit: V,
) -> Result<()>
where
    V: FnMut(&[usize], &TypicalityStat),
{
    check_shapes(y, f)?;
    check_delta(delta)?;
    let (m, n, s) = (f.rows(), f.cols(), f.count());
    if k == 0 || k >= m || k > n {
        return Err(Error::InvalidParameter(format!(
            "requires 1 <= K < M and K <= N (got K = {k}, M = {m}, N = {n})"
        )));
    }
    let count = binomial(n, k);
    if count > cap as f64 {
        return Err(Error::Budget { n, k, count, cap });
    }

    let mut scan = Scan {
        y,
        f,
        k,
        n,
        m,
        s,
        delta,
        bases: (0..s).map(|_| OrthoBasis::new(m, k)).collect(),
        resid: vec![0.0; (k + 1) * s * m],
        idx: vec![0; k],
    };
    for (sidx, ys) in y.measurements.iter().enumerate() {
        scan.resid[sidx * m..(sidx + 1) * m].copy_from_slice(ys.as_slice());
    }
    scan.descend(0, 0, &mut visit);
    Ok(())
}

struct Scan<'a> {
    y: &'a MeasurementEnsemble,
    f: &'a SensingEnsemble,
    k: usize,
    n: usize,
    m: usize,
    s: usize,
    delta: f64,
    bases: Vec<OrthoBasis>,
    /// Residual of each `y^s` after projecting out the first `depth` columns,
    /// laid out as `[depth][s][row]`.
    resid: Vec<f64>,
    idx: Vec<usize>,
}

impl Scan<'_> {
    fn descend<V: FnMut(&[usize], &TypicalityStat)>(&mut self, depth: usize, start: usize, visit: &mut V) {
        let (k, m, s) = (self.k, self.m, self.s);
        let stride = s * m;
        for j in start..=self.n - (k - depth) {
            self.idx[depth] = j;
            let mut pushed = 0;
            while pushed < s && self.bases[pushed].push(self.f.column(pushed, j)) {
                pushed += 1;
            }
            if pushed < s {
                for b in &mut self.bases[..pushed] {
                    b.pop();
                }
                self.visit_deficient_subtree(depth, visit);
                continue;
            }

            let (head, tail) = self.resid.split_at_mut((depth + 1) * stride);
            let prev = &head[depth * stride..];
            let next = &mut tail[..stride];
            next.copy_from_slice(prev);
            let mut energy = 0.0;
            for (sidx, basis) in self.bases.iter().enumerate() {
                let r = &mut next[sidx * m..(sidx + 1) * m];
                basis.deflate(depth, r);
                if depth + 1 == k {
                    energy += dot(r, r);
                }
            }

            if depth + 1 == k {
                let stat = TypicalityStat::new(energy, s, m, k, self.y.noise_var, self.delta);
                visit(&self.idx, &stat);
            } else {
                self.descend(depth + 1, j + 1, visit);
            }
            for b in &mut self.bases {
                b.pop();
            }
        }
    }

    fn visit_deficient_subtree<V: FnMut(&[usize], &TypicalityStat)>(&mut self, depth: usize, visit: &mut V) {
        let stat = TypicalityStat::rank_deficient(self.s, self.m, self.delta);
        let first = self.idx[depth];
        let remaining = self.k - depth - 1;
        let mut tail: Vec<usize> = (0..remaining).collect();
        let pool = self.n - first - 1;
        if remaining > pool {
            return;
        }
        loop {
            let mut full = self.idx[..=depth].to_vec();
            full.extend(tail.iter().map(|&t| first + 1 + t));
            visit(&full, &stat);
            if remaining == 0 || !next_combination(&mut tail, pool) {
                break;
            }
        }
    }
}

/// Exhaustive δ-joint-typicality decoding against a known true support.
///
/// The selected support is the typical candidate with the smallest
/// `|centered|`, ties going to the lexicographically first one.
pub fn decode(
    y: &MeasurementEnsemble,
    f: &SensingEnsemble,
    params: &ProblemParams,
    truth: &SupportSet,
) -> Result<DecodeOutcome> {
    decode_with_cap(y, f, params, truth, DEFAULT_ENUMERATION_CAP)
}

pub fn decode_with_cap(
    y: &MeasurementEnsemble,
    f: &SensingEnsemble,
    params: &ProblemParams,
    truth: &SupportSet,
    cap: u64,
) -> Result<DecodeOutcome> {
    if f.rows() != params.m || f.cols() != params.n || f.count() != params.s {
        return Err(Error::InvalidDimension(format!(
            "sensing ensemble {}x{}x{} does not match (S, M, N) = ({}, {}, {})",
            f.count(),
            f.rows(),
            f.cols(),
            params.s,
            params.m,
            params.n
        )));
    }
    if truth.len() != params.k || truth.ambient_dim() != params.n {
        return Err(Error::InvalidDimension(format!(
            "true support {truth} does not have K = {} in N = {}",
            params.k, params.n
        )));
    }
    let delta = params.delta();
    let mut correct_typical = false;
    let mut num_incorrect_typical = 0u64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    scan_supports(y, f, params.k, delta, cap, |idx, stat| {
        let typical = stat.is_typical();
        if idx == truth.indices() {
            correct_typical = typical;
        } else if typical {
            num_incorrect_typical += 1;
        }
        if typical {
            let score = stat.centered.abs();
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, idx.to_vec()));
            }
        }
    })?;
    let decoded = best
        .map(|(_, idx)| SupportSet::new(idx, params.n))
        .transpose()?;
    let decode_error = decoded.as_ref() != Some(truth);
    Ok(DecodeOutcome {
        decoded,
        correct_typical,
        num_incorrect_typical,
        event_failure: !correct_typical || num_incorrect_typical > 0,
        decode_error,
    })
}

/// Per-vector least-squares coefficients on the columns `J`.
pub fn ls_estimate(
    j: &SupportSet,
    y: &MeasurementEnsemble,
    f: &SensingEnsemble,
) -> Result<Vec<DVector<f64>>> {
    check_shapes(y, f)?;
    let (m, k) = (f.rows(), j.len());
    y.measurements
        .iter()
        .enumerate()
        .map(|(sidx, ys)| {
            let mut basis = OrthoBasis::new(m, k);
            for &col in j.indices() {
                if !basis.push(f.column(sidx, col)) {
                    return Err(Error::RankDeficient {
                        rank: basis.len(),
                        expected: k,
                    });
                }
            }
            Ok(DVector::from_vec(basis.solve(ys.as_slice())))
        })
        .collect()
}

/// `δ = ρ⁻¹(1 − K/M)x_min²`.
pub fn default_delta(params: &ProblemParams) -> Result<f64> {
    if !(params.rho > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "requires rho > 1 (got {})",
            params.rho
        )));
    }
    if params.m <= params.k {
        return Err(Error::InvalidParameter(format!(
            "requires M > K (got M = {}, K = {})",
            params.m, params.k
        )));
    }
    Ok(crate::ensemble::rho_delta(
        params.k,
        params.m,
        params.x_min_sq,
        params.rho,
    ))
}
