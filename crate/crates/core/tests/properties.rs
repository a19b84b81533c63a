mod common;

use jsm2_lab::bounds::{d1, d2, exp_ineq_bounds, fano_lower_perr_at, p_chernoff, upper_bound_perr};
use jsm2_lab::combin::{binomial, ln_binomial};
use jsm2_lab::decoder::{scan_supports, typicality_stat};
use jsm2_lab::ensemble::{measure, sample_sensing, sample_sparse_ensemble, sample_support, AmplitudeMode, ProblemParams};
use jsm2_lab::montecarlo::{isotonic_nonincreasing, read_rows, run_trials, write_rows, EstimateWithCI, SweepAxis, TrialPlan, sweep};
use jsm2_lab::quadstats::quadform_log_mgf;
use jsm2_lab::quadstats::QuadFormSpec;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ProblemParams> {
    (1usize..12, 1usize..30, 0usize..200, 1usize..40, -2.0f64..2.0, -2.0f64..4.0, 1.05f64..20.0).prop_map(
        |(k, extra_m, extra_n, s, log_sigma2, log_snr, rho)| {
            let m = k + extra_m;
            let sigma2 = 10f64.powf(log_sigma2);
            ProblemParams::new(m + extra_n, k, m, s, sigma2, sigma2 * 10f64.powf(log_snr))
                .unwrap()
                .with_rho(rho)
                .unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exponential_forms_dominate_chernoff(p in params(), extra in 1.0f64..4.0) {
        let beta = (p.s * (p.m - p.k)) as f64 / 2.0;
        let (e1, _) = exp_ineq_bounds(&p, p.x_min_sq, &vec![p.noise_var + p.x_min_sq; p.s]).unwrap();
        prop_assert!(p_chernoff(1.0 + d1(&p), beta).unwrap() <= e1 + 1e-12);
        let xj = p.x_min_sq * extra;
        let alphas: Vec<f64> = (0..p.s).map(|i| p.noise_var + xj * (1.0 + i as f64 / p.s as f64)).collect();
        let (_, e2) = exp_ineq_bounds(&p, xj, &alphas).unwrap();
        prop_assert!(p_chernoff(d2(&p, p.noise_var + xj), beta).unwrap() <= e2 + 1e-12);
    }

    #[test]
    fn upper_bound_shrinks_with_more_vectors(p in params()) {
        let a = upper_bound_perr(&p).unwrap();
        let b = upper_bound_perr(&p.with_s(p.s * 2).unwrap()).unwrap();
        prop_assert!(b.log_upper_perr < a.log_upper_perr);
        prop_assert!(a.mu_i < 1.0 && a.mu_j < 1.0);
        prop_assert!((0.0..=1.0).contains(&a.upper_perr));
    }

    #[test]
    fn fano_is_a_probability_and_falls_with_m(n in 3usize..5000, k in 1usize..3, s in 1usize..20, snr in 0.01f64..100.0, m in 0.0f64..50.0) {
        let a = fano_lower_perr_at(n, k, s, snr, m);
        let b = fano_lower_perr_at(n, k, s, snr, m + 1.0);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn binomial_logs_agree(n in 1usize..60, k in 0usize..60) {
        let k = k.min(n);
        prop_assert!((ln_binomial(n, k) - binomial(n, k).ln()).abs() < 1e-9 * (1.0 + binomial(n, k).ln().abs()));
    }

    #[test]
    fn mgf_is_log_convex_and_one_at_zero(eigs in prop::collection::vec(0.1f64..5.0, 1..8), frac in -3.0f64..0.45) {
        let spec = QuadFormSpec::new(eigs).unwrap();
        let t = frac / spec.max_eigenvalue();
        prop_assert_eq!(quadform_log_mgf(&spec, 0.0).unwrap(), 0.0);
        let h = 1e-3 / spec.max_eigenvalue();
        let mid = quadform_log_mgf(&spec, t).unwrap();
        let lo = quadform_log_mgf(&spec, t - h).unwrap();
        let hi = quadform_log_mgf(&spec, t + h).unwrap();
        prop_assert!(lo + hi - 2.0 * mid >= -1e-12);
    }

    #[test]
    fn wilson_contains_point(trials in 1u64..100_000, frac in 0.0f64..=1.0) {
        let succ = ((trials as f64) * frac).floor() as u64;
        let e = EstimateWithCI::wilson(succ, trials);
        prop_assert!(0.0 <= e.ci_low && e.ci_low <= e.point && e.point <= e.ci_high && e.ci_high <= 1.0);
    }

    #[test]
    fn isotonic_fit_is_monotone_and_mean_preserving(v in prop::collection::vec(0.0f64..1.0, 0..30)) {
        let fit = isotonic_nonincreasing(&v, &vec![1.0; v.len()]);
        prop_assert!(fit.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let sum_v: f64 = v.iter().sum();
        let sum_f: f64 = fit.iter().sum();
        prop_assert!((sum_v - sum_f).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_a_pure_function_of_seed(seed in any::<u64>(), n in 2usize..12, s in 1usize..4) {
        let k = 1 + (seed as usize % (n - 1));
        let sup = sample_support(n, k, seed).unwrap();
        prop_assert_eq!(&sup, &sample_support(n, k, seed).unwrap());
        let x = sample_sparse_ensemble(&sup, s, 1.0, AmplitudeMode::Fixed, seed).unwrap();
        let f = sample_sensing(k + 1, n, s, seed).unwrap();
        let y1 = measure(&x, &f, 0.5, seed).unwrap();
        let y2 = measure(&x, &sample_sensing(k + 1, n, s, seed).unwrap(), 0.5, seed).unwrap();
        prop_assert_eq!(y1, y2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn decoder_matches_dense_reference(seed in any::<u64>(), n in 3usize..8, k in 1usize..3, s in 1usize..4, log_snr in -1.0f64..3.0, widen in 1.0f64..30.0) {
        let k = k.min(n - 1);
        let m = k + 1 + (seed as usize % (n - k));
        let p = ProblemParams::from_snr(n, k, m, s, 10f64.powf(log_snr)).unwrap();
        let p = p.with_delta(p.delta() * widen).unwrap();
        let truth = sample_support(n, k, seed).unwrap();
        let x = sample_sparse_ensemble(&truth, s, p.x_min_sq.sqrt(), AmplitudeMode::Fixed, seed).unwrap();
        let f = sample_sensing(m, n, s, seed ^ 1).unwrap();
        let y = measure(&x, &f, p.noise_var, seed ^ 2).unwrap();
        let mut ours = Vec::new();
        scan_supports(&y, &f, k, p.delta(), u64::MAX, |idx, st| ours.push((idx.to_vec(), st.is_typical()))).unwrap();
        let dense = common::dense_decode(&y, &f, k, p.delta());
        prop_assert_eq!(&ours, &dense.flags);
        // Per-support statistics from the one-shot path agree with the dense projector.
        for (cols, _) in dense.flags.iter().take(5) {
            let j = jsm2_lab::ensemble::SupportSet::new(cols.clone(), n).unwrap();
            let stat = typicality_stat(&j, &y, &f, p.delta()).unwrap();
            let dense_total: f64 = (0..s)
                .map(|i| common::dense_residual(&f.matrices[i], cols, &y.measurements[i]).unwrap())
                .sum();
            prop_assert!((stat.value - dense_total).abs() <= 1e-9 * (1.0 + dense_total));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trial_runs_are_reproducible(seed in any::<u64>(), fix in any::<bool>()) {
        let p = ProblemParams::from_snr(7, 2, 4, 2, 20.0).unwrap();
        let plan = TrialPlan::new(p, 200, seed).with_fix_signal(fix);
        let a = run_trials(&plan).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_trials(&plan)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.decode_error.point <= 1.0);
    }

    #[test]
    fn sweep_csv_round_trips(seed in any::<u64>()) {
        let plans: Vec<TrialPlan> = [3usize, 5, 4]
            .iter()
            .map(|&m| TrialPlan::new(ProblemParams::from_snr(6, 2, m, 1, 30.0).unwrap(), 30, seed))
            .collect();
        let rows = sweep(&plans, SweepAxis::M);
        prop_assert!(rows.windows(2).all(|w| w[0].m <= w[1].m));
        let mut a = Vec::new();
        write_rows(&rows, &mut a).unwrap();
        let back = read_rows(a.as_slice()).unwrap();
        let mut b = Vec::new();
        write_rows(&back, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }
}
