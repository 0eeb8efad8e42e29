use super::*;
use crate::estimators::build_linewidth_histogram_from;
use crate::fitting::simulate_linewidths;
use proptest::prelude::*;

#[test]
fn scheme_layout() {
    let s = BinningScheme::default();
    assert_eq!(s.n_bins(), 28);
    assert_eq!(s.bin_of(0.2), Some(0));
    assert_eq!(s.bin_of(15.0), Some(0));
    assert_eq!(s.bin_of(15.01), Some(1));
    assert_eq!(s.bin_of(20.0), Some(1));
    assert_eq!(s.bin_of(150.0), Some(27));
    assert_eq!(s.bin_of(150.1), None);
    assert_eq!(s.upper_edges()[27], 150.0);
    assert!(BinningScheme { min_expected: 0.5, ..s }.validate().is_err());
    assert!(BinningScheme { base_bin_width: 0.0, ..s }.validate().is_err());
}

#[test]
fn merge_is_identity_when_all_bins_are_full() {
    let e = [6.0, 7.0, 5.0, 9.0];
    let o = [1.0, 2.0, 3.0, 4.0];
    let m = merge_bins(&o, &e, 5.0).unwrap();
    assert_eq!(m.expected, e);
    assert_eq!(m.observed, o);
    assert!(!m.residual);
}

#[test]
fn merge_hand_example() {
    // sub-cutoff bin, then [20, 3, 2, 8]
    let e = [10.0, 20.0, 3.0, 2.0, 8.0];
    let o = [9.0, 18.0, 1.0, 4.0, 7.0];
    let m = merge_bins(&o, &e, 5.0).unwrap();
    assert_eq!(m.expected, vec![10.0, 20.0, 5.0, 8.0]);
    assert_eq!(m.observed, vec![9.0, 18.0, 5.0, 7.0]);
    assert_eq!(m.groups, vec![(0, 0), (1, 1), (2, 3), (4, 4)]);
}

#[test]
fn merge_folds_leftovers() {
    // 1 + 1 next to the cutoff bin cannot stand alone
    let m = merge_bins(&[0.0; 5], &[8.0, 1.0, 1.0, 3.0, 3.0], 5.0).unwrap();
    assert_eq!(m.expected, vec![8.0, 8.0]);
    assert_eq!(m.groups, vec![(0, 0), (1, 4)]);
    // the sub-cutoff bin survives even when light
    let m = merge_bins(&[0.0; 3], &[2.0, 4.0, 4.0], 5.0).unwrap();
    assert_eq!(m.expected, vec![2.0, 8.0]);
    assert!(m.residual);
    // except when it is empty
    let m = merge_bins(&[1.0, 0.0, 0.0], &[0.0, 4.0, 4.0], 5.0).unwrap();
    assert_eq!(m.expected, vec![8.0]);
    assert_eq!(m.observed, vec![1.0]);
}

#[test]
fn merge_errors() {
    assert!(matches!(merge_bins(&[1.0], &[1.0, 2.0], 5.0), Err(Error::LengthMismatch { .. })));
    assert!(matches!(merge_bins(&[0.0; 3], &[1.0, 1.0, 1.0], 5.0), Err(Error::CannotBin { .. })));
}

#[test]
fn chi2_hand_values() {
    assert_eq!(chi2_statistic(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
    assert_eq!(chi2_statistic(&[10.0], &[5.0]).unwrap(), 5.0);
    assert!((chi2_statistic(&[8.0, 2.0], &[5.0, 5.0]).unwrap() - 3.6).abs() < 1e-12);
    assert!(matches!(chi2_statistic(&[1.0, 1.0], &[1.0, 0.0]), Err(Error::ZeroExpected { bin: 1 })));
}

fn grid(s: Vec<Option<f64>>, ng: usize, nn: usize) -> McmGrid {
    McmGrid {
        gammas: (0..ng).map(|i| 10.0 + i as f64).collect(),
        nbars: (0..nn).map(|i| 20.0 + 2.0 * i as f64).collect(),
        masked: s.iter().filter(|v| v.is_none()).count(),
        s,
        replicas: 1,
        scale: 1.0,
    }
}

#[test]
fn region_of_constant_surface_is_everything() {
    let r = confidence_region(&grid(vec![Some(3.0); 12], 3, 4), DELTA_99_TWO_PARAMS).unwrap();
    assert_eq!(r.region.len(), 12);
    assert!(r.boundary_hit);
    assert_eq!(r.gamma_ci, (10.0, 12.0));
}

#[test]
fn region_with_zero_delta_is_the_minimum() {
    let mut s: Vec<Option<f64>> = (0..25).map(|i| Some(10.0 + i as f64)).collect();
    s[12] = Some(1.0);
    s[3] = None;
    let r = confidence_region(&grid(s, 5, 5), 0.0).unwrap();
    assert_eq!(r.region, vec![(2, 2)]);
    assert!(!r.boundary_hit);
    assert_eq!((r.best_gamma, r.best_nbar, r.s_min), (12.0, 24.0, 1.0));
    assert_eq!(r.gamma_ci, (12.0, 12.0));
    assert!(r.gamma_contains(12.0) && !r.gamma_contains(12.5));
}

#[test]
fn single_cell_grid() {
    let r = confidence_region(&grid(vec![Some(4.2)], 1, 1), DELTA_99_TWO_PARAMS).unwrap();
    assert_eq!(r.region, vec![(0, 0)]);
    assert_eq!(r.s_min, 4.2);
}

#[test]
fn fully_masked_grid_is_an_error() {
    assert!(confidence_region(&grid(vec![None; 4], 2, 2), 9.21).is_err());
}

#[test]
fn grid_axes() {
    let g = GridSpec::from_ranges((10.0, 40.0, 1.0), (10.0, 60.0, 2.0)).unwrap();
    assert_eq!(g.gammas.len(), 31);
    assert_eq!(g.nbars.len(), 26);
    assert_eq!(*g.nbars.last().unwrap(), 60.0);
    assert!(GridSpec::new(vec![10.0, 10.0], vec![1.0]).is_err());
    assert!(GridSpec::new(vec![], vec![1.0]).is_err());
}

#[test]
fn self_comparison_gives_zero() {
    let model = FixedModel::default();
    let scheme = BinningScheme::default();
    let k = 400;
    let scan_model = model.scan_model(20.0, 25.0, 77).unwrap();
    let (lw, summary) = simulate_linewidths(&scan_model, k, &model.acceptance, &model.fit).unwrap();
    let fwhms: Vec<f64> = lw.iter().map(|l| l.fwhm).collect();
    let observed = build_linewidth_histogram_from(&fwhms, summary.total, &scheme).unwrap();
    let e = expected_histogram(20.0, 25.0, &model, k, k, &scheme, 77).unwrap();
    assert_eq!(e, observed.with_overflow());
    // γ = 20, n̄ = 25 puts mass in the sub-cutoff bin
    assert!(e[0] > 0.0);
    let m = merge_bins(&observed.with_overflow(), &e, scheme.min_expected).unwrap();
    assert_eq!(chi2_statistic(&m.observed, &m.expected).unwrap(), 0.0);
}

#[test]
fn expected_counts_scale_with_acceptance() {
    let model = FixedModel::default();
    let h = simulate_histogram(20.0, 25.0, &model, 3000, &BinningScheme::default(), 5).unwrap();
    let e = h.scaled(300);
    let total: f64 = e.iter().sum();
    let rate = h.accepted as f64 / h.replicas as f64;
    assert!((total - 300.0 * rate).abs() < 1e-9);
    assert!(rate > 0.7 && rate < 0.95, "{rate}");
}

#[test]
fn small_search_finds_truth_cell() {
    let model = FixedModel::default();
    let scheme = BinningScheme::default();
    let scan_model = model.scan_model(20.0, 40.0, 11).unwrap();
    let (lw, summary) = simulate_linewidths(&scan_model, 1000, &model.acceptance, &model.fit).unwrap();
    let fwhms: Vec<f64> = lw.iter().map(|l| l.fwhm).collect();
    let observed = build_linewidth_histogram_from(&fwhms, summary.total, &scheme).unwrap();
    let g = GridSpec::new(vec![14.0, 20.0, 26.0], vec![25.0, 40.0, 55.0]).unwrap();
    let config = McmConfig {
        replicas: Some(3000),
        seed: 3,
        ..Default::default()
    };
    let surface = grid_search(&observed, &g, &model, &config).unwrap();
    let r = confidence_region(&surface, config.delta).unwrap();
    assert_eq!((r.best_gamma, r.best_nbar), (20.0, 40.0), "{:?}", surface.s);
    assert!(r.region.contains(&(1, 1)));

    // the far corners are strongly excluded and evaluation order is irrelevant
    assert!(surface.at(0, 0).unwrap() > r.s_min + 100.0);
    let lib = ExpectedLibrary::build(&g, &model, &scheme, 3000, 3).unwrap();
    assert_eq!(lib.search(&observed).unwrap(), surface);
    let csv = surface.to_csv();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("gamma_mhz,nbar,s\n14,25,"));
}

proptest! {
    #[test]
    fn merge_conserves_totals(
        bins in prop::collection::vec((0u32..30, 0.0f64..12.0), 2..30),
    ) {
        let (o, e): (Vec<f64>, Vec<f64>) = bins.into_iter().map(|(o, e)| (o as f64, e)).unzip();
        prop_assume!(e.iter().sum::<f64>() >= 5.0);
        let m = merge_bins(&o, &e, 5.0).unwrap();
        prop_assert!((m.observed.iter().sum::<f64>() - o.iter().sum::<f64>()).abs() < 1e-9);
        prop_assert!((m.expected.iter().sum::<f64>() - e.iter().sum::<f64>()).abs() < 1e-9);
        // only the sub-cutoff bin may stay light
        prop_assert!(m.expected.iter().skip(1).all(|&x| x >= 5.0));
        prop_assert!(m.expected.iter().all(|&x| x > 0.0));
        let s = chi2_statistic(&m.observed, &m.expected).unwrap();
        prop_assert!(s >= 0.0);
    }
}
