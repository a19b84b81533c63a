//! Dense reference decoder: explicit projectors from an SVD pseudo-inverse,
//! no incremental updates, no shared state between candidates.

#![allow(dead_code)]

use jsm2_lab::ensemble::{MeasurementEnsemble, SensingEnsemble};
use nalgebra::{DMatrix, DVector};

pub struct DenseResult {
    /// Every K-subset in lexicographic order with its typicality flag.
    pub flags: Vec<(Vec<usize>, bool)>,
    pub selected: Option<Vec<usize>>,
}

pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// `||(I − F_J F_J⁺) y||²`, or `None` when `F_J` is numerically rank deficient.
pub fn dense_residual(f: &DMatrix<f64>, cols: &[usize], y: &DVector<f64>) -> Option<f64> {
    let fj = f.select_columns(cols);
    let svd = fj.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if sv.min() < 1e-10 * smax {
        return None;
    }
    let pinv = svd.pseudo_inverse(0.0).ok()?;
    let proj = &fj * pinv;
    let m = f.nrows();
    let r = (DMatrix::identity(m, m) - proj) * y;
    Some(r.norm_squared())
}

pub fn dense_decode(y: &MeasurementEnsemble, f: &SensingEnsemble, k: usize, delta: f64) -> DenseResult {
    let (m, n, s) = (f.rows(), f.cols(), f.count());
    let center = (s * (m - k)) as f64 * y.noise_var;
    let threshold = (s * m) as f64 * delta;
    let mut flags = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for cols in subsets(n, k) {
        let mut total = 0.0;
        let mut full_rank = true;
        for sidx in 0..s {
            match dense_residual(&f.matrices[sidx], &cols, &y.measurements[sidx]) {
                Some(e) => total += e,
                None => full_rank = false,
            }
        }
        let dev = (total - center).abs();
        let typical = full_rank && dev < threshold;
        if typical && best.as_ref().is_none_or(|(b, _)| dev < *b) {
            best = Some((dev, cols.clone()));
        }
        flags.push((cols, typical));
    }
    DenseResult { flags, selected: best.map(|(_, c)| c) }
}
