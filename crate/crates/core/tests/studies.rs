use wrcosim::studies::{
    corpus_config, iterate_study, lemma_check, order_study, GainVerdict, LemmaConfig, Perturbation, LEMMA_DT_LIST,
    ORDER_H_LIST,
};
use wrcosim::{corpus, parse_netlist, CoupledSystem, Prediction, Scheme, Verdict, WrConfig};

#[test]
fn prediction_agrees_with_observation_on_the_corpus() {
    let a = iterate_study(&parse_netlist(corpus::CIRCUIT_A).unwrap(), &corpus_config()).unwrap();
    assert_eq!(a.prediction.prediction, Prediction::ConvergenceGuaranteed);
    assert_eq!(a.verdict, Verdict::Converged);
    assert!(a.errors_decrease(), "{:?}", a.errors_vs_mono);

    let b = iterate_study(&parse_netlist(corpus::CIRCUIT_B).unwrap(), &corpus_config()).unwrap();
    assert_eq!(b.prediction.prediction, Prediction::NoGuarantee);
    assert_eq!(b.verdict, Verdict::Diverged);
    let e = &b.errors_vs_mono;
    assert!(e[1..].windows(2).all(|w| w[1] > w[0]), "{e:?}");
}

#[test]
fn gauss_seidel_single_sweep_is_first_order_in_h() {
    let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let r = order_study(&c, &ORDER_H_LIST, 1, &corpus_config()).unwrap();
    assert_eq!(r.rows.len(), 5);
    assert!(r.rows.windows(2).all(|w| w[1].h < w[0].h));
    let slope = r.fitted_slope.unwrap();
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
}

#[test]
fn two_jacobi_sweeps_are_first_order_in_h() {
    let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let cfg = WrConfig { scheme: Scheme::Jacobi, ..corpus_config() };
    let r = order_study(&c, &ORDER_H_LIST, 2, &cfg).unwrap();
    let slope = r.fitted_slope.unwrap();
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
}

#[test]
fn fully_converged_sweep_hits_the_floor() {
    let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let cfg = WrConfig { tol: 1e-13, t_end: 1.0, ..corpus_config() };
    let r = order_study(&c, &ORDER_H_LIST, 40, &cfg).unwrap();
    assert_eq!(r.fitted_slope, None);
    assert!(!r.warnings.is_empty());
}

#[test]
fn parallel_sweep_matches_sequential() {
    let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let cfg = WrConfig { t_end: 1.0, ..corpus_config() };
    let a = order_study(&c, &ORDER_H_LIST, 1, &cfg).unwrap();
    let b = order_study(&c, &ORDER_H_LIST, 1, &WrConfig { threads: 4, ..cfg }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn circuit_gain_is_bounded_only_without_cv_path() {
    let a = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let r = lemma_check(&a, &LEMMA_DT_LIST, &LemmaConfig::default()).unwrap();
    assert_eq!(r.verdict, GainVerdict::Bounded, "{:?}", r.ratios);

    let b = CoupledSystem::from_netlist(corpus::CIRCUIT_B).unwrap();
    let hat = LemmaConfig { shape: Perturbation::Hat, ..Default::default() };
    let r = lemma_check(&b, &LEMMA_DT_LIST, &hat).unwrap();
    assert_eq!(r.verdict, GainVerdict::Growing, "{:?}", r.ratios);
}

#[test]
fn gain_is_amplitude_independent_for_linear_circuit() {
    let a = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let full = lemma_check(&a, &[1e-3], &LemmaConfig::default()).unwrap();
    let half = lemma_check(&a, &[1e-3], &LemmaConfig { amplitude: 5e-4, ..Default::default() }).unwrap();
    let (x, y) = (full.rows[0].1, half.rows[0].1);
    assert!(x.is_finite() && ((x - y) / x).abs() < 0.1);
}

#[test]
fn csv_outputs_have_expected_headers() {
    let c = CoupledSystem::from_netlist(corpus::CIRCUIT_A).unwrap();
    let cfg = WrConfig { t_end: 1.0, ..corpus_config() };
    let mut buf = Vec::new();
    order_study(&c, &[0.5, 0.25], 1, &cfg).unwrap().write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("H,err_v,err_i\n"));
    let mut buf = Vec::new();
    lemma_check(&c, &[2e-3, 1e-3], &LemmaConfig::default()).unwrap().write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("dt,nu_hat\n"));
    assert_eq!(text.lines().count(), 3);
}
