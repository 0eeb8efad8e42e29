use super::*;
use proptest::prelude::*;
use rand_distr::{Distribution, LogNormal};

fn set(fwhms: &[f64], stderrs: &[f64]) -> LinewidthSampleSet {
    LinewidthSampleSet::new(fwhms.to_vec(), stderrs.to_vec(), SampleSource::default()).unwrap()
}

#[test]
fn median_of_odd_and_even_lengths() {
    assert_eq!(median(&[10.0, 30.0, 20.0]).unwrap(), 20.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    assert!(matches!(median(&[]), Err(Error::EmptySamples)));
}

#[test]
fn median_estimate_interval_brackets_value() {
    let xs: Vec<f64> = (1..=201).map(|i| i as f64).collect();
    let s = set(&xs, &vec![1.0; xs.len()]);
    let e = median_estimate(&s, &BootstrapConfig::default()).unwrap();
    assert_eq!(e.value, 101.0);
    assert!(e.ci_lo < 101.0 && e.ci_hi > 101.0);
    // sd of the median of U(1, 201) with n = 201 is about 7; the 99% band is
    // roughly ±2.6 sd
    assert!(e.ci_hi - e.ci_lo > 20.0 && e.ci_hi - e.ci_lo < 60.0, "{e:?}");
}

#[test]
fn bootstrap_is_seeded() {
    let xs: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 + 1.0).collect();
    let cfg = BootstrapConfig { seed: 4, ..Default::default() };
    let a = bootstrap_ci(&xs, median_in_place, &cfg).unwrap();
    let b = bootstrap_ci(&xs, median_in_place, &cfg).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_ci(&xs, median_in_place, &BootstrapConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn bootstrap_does_not_depend_on_thread_count() {
    let xs: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
    let cfg = BootstrapConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_ci(&xs, median_in_place, &cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn ivw_hand_values() {
    let e = ivw_estimate(&set(&[10.0, 30.0], &[1.0, 3.0])).unwrap();
    assert!((e.value - 12.0).abs() < 1e-12);
    assert!((e.stderr - (1.0f64 / (1.0 + 1.0 / 9.0)).sqrt()).abs() < 1e-12);
    let e = ivw_estimate(&set(&[10.0, 20.0, 60.0], &[2.0, 2.0, 2.0])).unwrap();
    assert!((e.value - 30.0).abs() < 1e-12);
}

#[test]
fn ivw_rejects_zero_stderr() {
    let s = set(&[10.0, 20.0], &[1.0, 0.0]);
    assert!(matches!(ivw_estimate(&s), Err(Error::ZeroStdErr { index: 1 })));
    assert_eq!(ivw_estimate(&s.with_positive_stderr()).unwrap().value, 10.0);
}

#[test]
fn lognormal_median_checks() {
    assert!(matches!(
        lognormal_median(&set(&[5.0; 9], &[1.0; 9])),
        Err(Error::TooFewSamples { needed: 10, got: 9 })
    ));
    assert!((lognormal_median(&set(&[7.5; 12], &[1.0; 12])).unwrap() - 7.5).abs() < 1e-12);

    let mut r = rng::stream(3, 0);
    let d = LogNormal::new(3.0, 0.4).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut r)).collect();
    let fit = lognormal_fit(&xs).unwrap();
    assert!((fit.median() / 3f64.exp() - 1.0).abs() < 0.02);
    assert!((fit.sigma_ln - 0.4).abs() < 0.01);
}

#[test]
fn sample_set_validation() {
    assert!(LinewidthSampleSet::new(vec![1.0], vec![], SampleSource::default()).is_err());
    assert!(LinewidthSampleSet::new(vec![0.0], vec![1.0], SampleSource::default()).is_err());
    assert!(LinewidthSampleSet::new(vec![1.0], vec![-1.0], SampleSource::default()).is_err());
    let s = LinewidthSampleSet::new(vec![1.0, 2.0], vec![0.1, 0.2], SampleSource { scans: 5, mean_photons: None }).unwrap();
    assert_eq!(s.rejected(), 3);
}

#[test]
fn report_fields() {
    let s = LinewidthSampleSet::new(
        vec![10.0, 12.0, 14.0, 30.0],
        vec![1.0, 0.0, 1.0, 3.0],
        SampleSource { scans: 6, mean_photons: Some(25.0) },
    )
    .unwrap();
    let r = estimate(EstimatorKind::Ivw, &s, &BootstrapConfig::default()).unwrap();
    assert_eq!((r.k_used, r.k_rejected), (3, 3));
    assert!(r.ci_lo < r.value_mhz && r.value_mhz < r.ci_hi);
    let m = estimate(EstimatorKind::Median, &s, &BootstrapConfig::default()).unwrap();
    assert_eq!(m.value_mhz, 13.0);
    let json = serde_json::to_value(&m).unwrap();
    for key in ["estimator", "value_mhz", "ci_lo", "ci_hi", "k_used", "k_rejected"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["estimator"], "median");
}

#[test]
fn normal_quantile_reference() {
    assert!((normal_quantile(0.995) - 2.5758293035489).abs() < 1e-9);
    assert!(normal_quantile(0.5).abs() < 1e-12);
}

#[test]
fn histogram_counts() {
    let scheme = BinningScheme::default();
    let h = build_linewidth_histogram_from(&[5.0, 10.0, 16.0], 3, &scheme).unwrap();
    assert_eq!(h.counts[0], 2);
    assert_eq!(h.counts[1], 1);
    let h = build_linewidth_histogram_from(&[15.0, 150.0, 150.5, 400.0], 10, &scheme).unwrap();
    assert_eq!(h.counts[0], 1);
    assert_eq!(*h.counts.last().unwrap(), 1);
    assert_eq!(h.overflow, 2);
    assert_eq!(h.scans, 10);
    let empty = build_linewidth_histogram_from(&[], 0, &scheme).unwrap();
    assert_eq!(empty.total(), 0);
}

proptest! {
    #[test]
    fn median_is_permutation_invariant(mut xs in prop::collection::vec(0.1f64..100.0, 1..60), seed in any::<u64>()) {
        let m = median(&xs).unwrap();
        let n = xs.len();
        for i in 0..n {
            xs.swap(i, (seed as usize).wrapping_mul(i + 7) % n);
        }
        prop_assert_eq!(median(&xs).unwrap(), m);
    }

    #[test]
    fn ivw_is_scale_invariant_and_convex(
        pairs in prop::collection::vec((0.1f64..100.0, 0.01f64..10.0), 1..40),
        c in 0.01f64..100.0,
    ) {
        let (f, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = ivw_estimate(&set(&f, &s)).unwrap().value;
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let b = ivw_estimate(&set(&f, &scaled)).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
    }

    #[test]
    fn histogram_conserves_samples(xs in prop::collection::vec(0.01f64..400.0, 0..200)) {
        let h = build_linewidth_histogram_from(&xs, xs.len(), &BinningScheme::default()).unwrap();
        prop_assert_eq!(h.total() as usize, xs.len());
    }
}
