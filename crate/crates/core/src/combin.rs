//! Binomial coefficients in log domain and lexicographic k-subset iteration.

use statrs::function::gamma::ln_gamma;

/// `log C(n, k)` via log-gamma. Returns `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `C(n, k)` as a float; exact for every count this crate enumerates.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Overflow-safe `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Rank of a sorted k-subset of `{0..n}` in lexicographic order.
pub fn lex_rank(subset: &[usize], n: usize) -> u64 {
    let k = subset.len();
    let mut rank = 0.0;
    let mut prev = 0usize;
    for (pos, &v) in subset.iter().enumerate() {
        for skipped in prev..v {
            rank += binomial(n - skipped - 1, k - pos - 1);
        }
        prev = v + 1;
    }
    rank as u64
}

/// Advances `idx` to the next k-subset of `{0..n}` in lexicographic order.
/// Returns `false` after the last subset.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_binomial_matches_exact_counts() {
        for n in 0..40 {
            for k in 0..=n {
                let exact = binomial(n, k);
                assert!((ln_binomial(n, k) - exact.ln()).abs() < 1e-10, "{n} {k}");
            }
        }
        assert_eq!(binomial(64, 4), 635_376.0);
    }

    #[test]
    fn combinations_enumerate_in_order() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 5) {
            seen.push(idx.clone());
        }
        assert_eq!(seen.len(), 10);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[9], vec![3, 4]);
        for (r, s) in seen.iter().enumerate() {
            assert_eq!(lex_rank(s, 5), r as u64);
        }
    }

    #[test]
    fn log_add_exp_handles_extremes() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(-1e4, -1e4 - 800.0) + 1e4).abs() < 1e-12);
    }
}
