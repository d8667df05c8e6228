use ndarray::{Array1, Array2};
use proptest::prelude::*;

use dp_ipw::dataset::{split_dataset, Dataset, OutcomeBounds, PrivacyBudget, SplitMode};
use dp_ipw::estimators::{estimate_with_weights, ipw_ate_trimmed, Estimand};
use dp_ipw::ingest::{normalize_unit_ball, StagedTable};
use dp_ipw::privacy::calibrate;
use dp_ipw::propensity::{log_sigmoid, scores, sigmoid};
use dp_ipw::rng::RngStream;
use dp_ipw::theory::{bias_g_with_sigma, markov_error_bound, sensitivity_tau, thm1_bound, SignConvention};

fn dataset() -> impl Strategy<Value = (Dataset, Vec<f64>)> {
    (2usize..15, 1usize..6).prop_flat_map(|(n, d)| {
        (
            proptest::collection::vec(-1.0f64..1.0, n * d),
            proptest::collection::vec(0u8..2, n),
            proptest::collection::vec(-10.0f64..10.0, n),
            proptest::collection::vec(-4.0f64..4.0, d),
        )
            .prop_map(move |(xs, t, y, w)| {
                let mut x = Array2::from_shape_vec((n, d), xs).unwrap();
                for mut row in x.rows_mut() {
                    let norm = row.dot(&row).sqrt();
                    if norm > 1.0 {
                        row /= norm;
                    }
                }
                (Dataset::new(x, t, Array1::from(y)).unwrap(), w)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn trimmed_estimate_within_deterministic_bound((data, w) in dataset(), xi in 0.01f64..0.49) {
        let s = scores(&w, &data).unwrap();
        let tau = ipw_ate_trimmed(&data, &s, xi).unwrap().value;
        prop_assert!(tau.abs() <= 2.0 * data.max_abs_outcome() / xi * (1.0 + 1e-12));
    }

    #[test]
    fn att_atc_with_cap_within_bound((data, w) in dataset(), xi_exp in 1.0f64..50.0) {
        for e in [Estimand::Att, Estimand::Atc] {
            let tau = estimate_with_weights(e, &data, &w, Some(xi_exp)).unwrap().value;
            prop_assert!(tau.abs() <= data.max_abs_outcome() * xi_exp * (1.0 + 1e-12));
        }
    }

    #[test]
    fn estimate_is_linear_in_outcomes((data, w) in dataset()) {
        let a = estimate_with_weights(Estimand::Ate, &data, &w, Some(0.05)).unwrap().value;
        let doubled = data.with_outcomes(data.outcomes() * 2.0).unwrap();
        let b = estimate_with_weights(Estimand::Ate, &doubled, &w, Some(0.05)).unwrap().value;
        prop_assert!((b - 2.0 * a).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn sigmoid_properties(z in -700.0f64..700.0) {
        let p = sigmoid(z);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((sigmoid(-z) - (1.0 - p)).abs() <= 1e-15);
        if p > 0.0 {
            prop_assert!((log_sigmoid(z) - p.ln()).abs() <= 1e-12 * (1.0 + p.ln().abs()));
        }
    }

    #[test]
    fn bias_zero_without_noise((data, w) in dataset()) {
        for conv in [SignConvention::AppendixProof, SignConvention::MainText] {
            prop_assert_eq!(bias_g_with_sigma(Estimand::Ate, &data, &w, 0.0, conv).unwrap().g_value, 0.0);
        }
    }

    #[test]
    fn bias_magnitude_grows_with_sigma_for_single_sign_outcomes((data, w) in dataset(), s in 0.01f64..1.0) {
        // Same-signed α coefficients: treated y ≥ 0, control y ≤ 0.
        let y: Vec<f64> = (0..data.n_rows())
            .map(|i| if data.treated(i) { data.outcomes()[i].abs() } else { -data.outcomes()[i].abs() })
            .collect();
        let data = data.with_outcomes(Array1::from(y)).unwrap();
        let g1 = bias_g_with_sigma(Estimand::Ate, &data, &w, s, SignConvention::AppendixProof).unwrap().g_value;
        let g2 = bias_g_with_sigma(Estimand::Ate, &data, &w, 2.0 * s, SignConvention::AppendixProof).unwrap().g_value;
        prop_assert!(g1 >= 0.0 && g2 >= g1);
    }

    #[test]
    fn bounds_are_probabilities(tau in 1e-6f64..5.0, g in -5.0f64..5.0, eta in 1e-3f64..20.0, delta in 1e-3f64..5.0) {
        let t = thm1_bound(tau, g, eta).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.value));
        let m = markov_error_bound(g, delta).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.value) && m.raw >= m.value);
    }

    #[test]
    fn sigma_is_linear_in_sensitivity(s in 1e-4f64..10.0, eps in 0.01f64..0.99, delta in 1e-10f64..0.5) {
        let b = PrivacyBudget::new(eps, delta).unwrap();
        let a = calibrate(s, b).unwrap().sigma;
        let c = calibrate(2.0 * s, b).unwrap().sigma;
        prop_assert!((c - 2.0 * a).abs() <= 1e-12 * c);
    }

    #[test]
    fn sensitivity_scales_inversely_with_n(c_y in 0.0f64..100.0, xi in 0.01f64..0.49, n in 1usize..10_000) {
        let b = OutcomeBounds::for_trim(c_y, xi).unwrap();
        for e in [Estimand::Ate, Estimand::Att, Estimand::Atc] {
            let s1 = sensitivity_tau(&b, n, e).unwrap();
            let s2 = sensitivity_tau(&b, 2 * n, e).unwrap();
            prop_assert!((s1 - 2.0 * s2).abs() <= 1e-12 * (1.0 + s1));
        }
    }

    #[test]
    fn split_partitions_rows((data, _w) in dataset(), seed in any::<u64>(), stratified in any::<bool>()) {
        let m = 1 + (seed as usize % (data.n_rows() - 1));
        let mode = if stratified { SplitMode::Stratified } else { SplitMode::Uniform };
        let (fit, est, split) = split_dataset(&data, m, mode, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(fit.n_rows(), m);
        prop_assert_eq!(est.n_rows() + m, data.n_rows());
        let mut all: Vec<usize> = split.fit_indices.iter().chain(&split.estimate_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..data.n_rows()).collect::<Vec<_>>());
        prop_assert_eq!(split.reassemble(&fit, &est).unwrap(), data);
    }

    #[test]
    fn normalized_tables_fit_in_unit_ball(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..20)) {
        let n = rows.len();
        let table = StagedTable {
            covariate_names: vec!["a".into(), "b".into(), "c".into()],
            covariates: Array2::from_shape_vec((n, 3), rows.into_iter().flatten().collect()).unwrap(),
            treatments: vec![0; n],
            outcomes: vec![0.0; n],
            realizations: None,
        };
        let (data, factor) = normalize_unit_ball(&table).unwrap();
        prop_assert!(factor > 0.0);
        prop_assert!(dp_ipw::dataset::validate_unit_ball(&data).passed);
    }
}
