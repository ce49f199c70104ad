use drm_core::asymptotics::blocks;
use drm_core::inference::{
    chi_square_beta_test, drm_cdf, empirical_cdf, gof_pairs, refine_tilts, refine_tilts_detailed,
    threshold_probability, wald_interval, z_tests, Method, ThresholdSource, DEFAULT_ALPHA,
};
use drm_core::simulation::{generate, CdfEvaluator, Family, GAMMA_NEIGHBOR, REFERENCE};
use drm_core::{fit, Basis, DrmError, FitOptions, FusedData, Sample, TiltSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair(reference: &Sample, neighbor: &Sample, tilt: TiltSpec) -> FusedData {
    FusedData::new(reference.clone(), vec![(neighbor.clone(), tilt)]).unwrap()
}

#[test]
fn gamma_neighbor_shows_a_log_tilt() {
    let (r, g, _) = generate(31, [1000, 1000, 1000]).unwrap();
    let f = fit(&pair(&r, &g, TiltSpec::global()), &FitOptions::default()).unwrap();
    let rep = z_tests(&f).unwrap();
    assert_eq!(rep.df, 3);
    assert!(rep.p_value < 1e-10);
    let comps = rep.per_component.unwrap();
    let by_basis = |b: Basis| comps.iter().find(|c| c.basis == b).unwrap();
    assert!(by_basis(Basis::Log).p_value < 1e-3, "{comps:?}");
    assert!((by_basis(Basis::Log).estimate - 1.0).abs() < 4.0 * by_basis(Basis::Log).se);
    for c in &comps {
        assert!((c.z - c.estimate / c.se).abs() < 1e-12);
    }
}

#[test]
fn same_distribution_is_not_rejected_and_refines_to_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let r = Sample::reference("r", REFERENCE.sample(&mut rng, 800)).unwrap();
    let n = Sample::neighbor("n", REFERENCE.sample(&mut rng, 800)).unwrap();
    let f = fit(&pair(&r, &n, TiltSpec::global()), &FitOptions::default()).unwrap();
    let rep = chi_square_beta_test(&f, DEFAULT_ALPHA).unwrap();
    assert!(rep.p_value > DEFAULT_ALPHA, "{rep:?}");
    assert!(rep.per_component.is_none());
    let tilts = refine_tilts(&r, &[n], DEFAULT_ALPHA).unwrap();
    assert!(tilts[0].is_empty());
}

#[test]
fn chi_square_ignores_within_sample_order() {
    let (r, g, _) = generate(4, [300, 300, 300]).unwrap();
    let f1 = fit(&pair(&r, &g, TiltSpec::global()), &FitOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rv = r.values().to_vec();
    let mut gv = g.values().to_vec();
    rv.shuffle(&mut rng);
    gv.shuffle(&mut rng);
    let r2 = Sample::reference("r", rv).unwrap();
    let g2 = Sample::neighbor("g", gv).unwrap();
    let f2 = fit(&pair(&r2, &g2, TiltSpec::global()), &FitOptions::default()).unwrap();
    let a = chi_square_beta_test(&f1, DEFAULT_ALPHA).unwrap().statistic;
    let b = chi_square_beta_test(&f2, DEFAULT_ALPHA).unwrap().statistic;
    assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn tilt_tests_need_a_single_neighbor() {
    let (r, g, l) = generate(5, [100, 100, 100]).unwrap();
    let data = FusedData::new(r, vec![(g, TiltSpec::global()), (l, TiltSpec::global())]).unwrap();
    let f = fit(&data, &FitOptions::default()).unwrap();
    assert!(matches!(z_tests(&f), Err(DrmError::InvalidOption(_))));
    assert!(matches!(chi_square_beta_test(&f, 0.05), Err(DrmError::InvalidOption(_))));
}

#[test]
fn refinement_is_deterministic_and_ordered() {
    let (r, g, l) = generate(77, [500, 500, 500]).unwrap();
    let nbs = [g, l];
    let a = refine_tilts_detailed(&r, &nbs, DEFAULT_ALPHA, &FitOptions::default()).unwrap();
    let b = refine_tilts_detailed(&r, &nbs, DEFAULT_ALPHA, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].label, nbs[0].label());
    assert_eq!(a[1].label, nbs[1].label());
    for rt in &a {
        // the kept components are exactly those with p below the level
        if let Some(comps) = &rt.report.per_component {
            let kept: Vec<Basis> = comps.iter().filter(|c| c.p_value < DEFAULT_ALPHA).map(|c| c.basis).collect();
            assert_eq!(rt.tilt.basis(), kept.as_slice());
        } else {
            assert!(rt.tilt.is_empty());
        }
    }
}

#[test]
fn refinement_rejects_bad_level() {
    let (r, g, _) = generate(1, [50, 50, 50]).unwrap();
    assert!(matches!(refine_tilts(&r, &[g], 1.5), Err(DrmError::InvalidOption(_))));
}

#[test]
fn misspecified_tilt_inflates_gof_deviation() {
    let (r, g, _) = generate(12, [1000, 1000, 1000]).unwrap();
    // x-only tilt cannot express w(x) = 2x; log x tilt is the truth
    let right = fit(&pair(&r, &g, "logx".parse().unwrap()), &FitOptions::default()).unwrap();
    let wrong = fit(&pair(&r, &g, "x".parse().unwrap()), &FitOptions::default()).unwrap();
    let good = gof_pairs(&right);
    let bad = gof_pairs(&wrong);
    assert!(bad.max_deviation > 2.0 * good.max_deviation, "{} vs {}", bad.max_deviation, good.max_deviation);
    assert!(good.max_deviation < 0.05);
    assert_eq!(good.points.len(), empirical_cdf(&r).points().len());
    assert!(good.points.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn drm_threshold_curve_is_monotone_and_centered() {
    let (r, g, l) = generate(3, [500, 500, 500]).unwrap();
    let tilts = refine_tilts(&r, &[g.clone(), l.clone()], DEFAULT_ALPHA).unwrap();
    let data = FusedData::new(r.clone(), vec![(g, tilts[0].clone()), (l, tilts[1].clone())]).unwrap();
    let f = fit(&data, &FitOptions::default()).unwrap();
    let bb = blocks(&f).unwrap();
    let cdf = drm_cdf(&f);
    let emp = empirical_cdf(&r);
    let mut last = 1.0;
    for t in [0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0] {
        let e = threshold_probability(&cdf, ThresholdSource::Drm { fit: &f, blocks: &bb }, t, 0.95).unwrap();
        assert_eq!(e.method, Method::Drm);
        assert_eq!(e.n_effective, 1500);
        assert!(e.prob <= last);
        last = e.prob;
        assert!(((e.ci.0 + e.ci.1) / 2.0 - e.prob).abs() < 1e-14);
        assert!(e.ci_clamped.0 >= 0.0 && e.ci_clamped.1 <= 1.0);
        let truth = 1.0 - REFERENCE.cdf(t);
        assert!((e.prob - truth).abs() < 5.0 * e.se.max(1e-3));
        let emp_e = threshold_probability(&emp, ThresholdSource::Empirical(&r), t, 0.95).unwrap();
        assert_eq!(emp_e.method, Method::Empirical);
        assert!(e.se <= emp_e.se * 1.05, "t = {t}: {} vs {}", e.se, emp_e.se);
    }
}

#[test]
fn empirical_threshold_is_wald() {
    let r = Sample::reference("r", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let e = threshold_probability(&empirical_cdf(&r), ThresholdSource::Empirical(&r), 2.5, 0.95).unwrap();
    let w = wald_interval(2.5, 0.5, 4, 0.95).unwrap();
    assert_eq!(e, w);
    assert!((e.se - 0.25).abs() < 1e-15);
}

#[test]
fn lognormal_family_cdf_is_consistent() {
    let fam = Family::LogNormal { mu: 1.0, sigma: 1.0 };
    assert!((fam.cdf(1.0_f64.exp()) - 0.5).abs() < 1e-12);
    assert!((GAMMA_NEIGHBOR.cdf(1.0) - (1.0 - 3.0 * (-2.0_f64).exp())).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn p_values_lie_in_unit_interval(seed in 0u64..1_000) {
        let (r, g, _) = generate(seed, [60, 60, 60]).unwrap();
        let f = match fit(&pair(&r, &g, TiltSpec::global()), &FitOptions::default()) {
            Ok(f) => f,
            Err(_) => return Err(TestCaseError::reject("fit failed")),
        };
        let rep = match z_tests(&f) {
            Ok(rep) => rep,
            Err(_) => return Err(TestCaseError::reject("singular covariance")),
        };
        prop_assert!((0.0..=1.0).contains(&rep.p_value));
        prop_assert!(rep.statistic >= 0.0);
        for c in rep.per_component.unwrap() {
            prop_assert!((0.0..=1.0).contains(&c.p_value));
            prop_assert!(c.se > 0.0);
        }
    }
}
