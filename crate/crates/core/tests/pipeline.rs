use std::path::Path;

use ple_linewidth::cli::io::{parse_scan_csv, write_scan_csv};
use ple_linewidth::estimators::{build_linewidth_histogram, estimate, BootstrapConfig, EstimatorKind, LinewidthSampleSet};
use ple_linewidth::fitting::fit_batch;
use ple_linewidth::mcm::{confidence_region, grid_search, FixedModel, GridSpec, McmConfig};
use ple_linewidth::synth::{synth_batch, ScanModel};

#[test]
fn fits_survive_a_file_round_trip() {
    let model = ScanModel::new(25.0, 50.0, 6.0, 2.0, 8).unwrap();
    let scans = synth_batch(&model, 300).unwrap();
    let back = parse_scan_csv(&write_scan_csv(&scans).unwrap(), Path::new("x.csv"), 0.0).unwrap();
    let m = FixedModel::default();
    let a = fit_batch(&scans, &m.acceptance, &m.fit);
    let b = fit_batch(&back, &m.acceptance, &m.fit);
    assert_eq!(a.summary, b.summary);
    for (x, y) in a.results.iter().zip(&b.results) {
        assert_eq!(x.fwhm.to_bits(), y.fwhm.to_bits());
    }
}

#[test]
fn well_lit_median_is_close_and_intervals_are_ordered() {
    let model = ScanModel::new(20.0, 80.0, 6.0, 2.0, 12).unwrap();
    let m = FixedModel::default();
    let batch = fit_batch(&synth_batch(&model, 1000).unwrap(), &m.acceptance, &m.fit);
    let set = LinewidthSampleSet::from_batch(&batch, Some(80.0));
    let boot = BootstrapConfig { resamples: 400, level: 0.99, seed: 1 };
    for kind in [EstimatorKind::Median, EstimatorKind::Ivw, EstimatorKind::Lognormal] {
        let r = estimate(kind, &set, &boot).unwrap();
        assert!(r.ci_lo <= r.value_mhz && r.value_mhz <= r.ci_hi, "{r:?}");
        assert_eq!(r.k_used + r.k_rejected, 1000);
        if kind == EstimatorKind::Median {
            assert!((r.value_mhz / 20.0 - 1.0).abs() < 0.05, "{r:?}");
        }
    }
}

#[test]
fn mcm_region_covers_the_truth_on_a_coarse_grid() {
    let (gamma, nbar) = (20.0, 30.0);
    let model = FixedModel::default();
    let scans = synth_batch(&model.scan_model(gamma, nbar, 404).unwrap(), 500).unwrap();
    let set = LinewidthSampleSet::from_batch(&fit_batch(&scans, &model.acceptance, &model.fit), Some(nbar));
    let config = McmConfig {
        replicas: Some(3000),
        seed: 5,
        ..McmConfig::default()
    };
    let observed = build_linewidth_histogram(&set, &config.scheme).unwrap();
    let grid = GridSpec::from_ranges((14.0, 26.0, 2.0), (20.0, 40.0, 5.0)).unwrap();
    let surface = grid_search(&observed, &grid, &model, &config).unwrap();
    let r = confidence_region(&surface, config.delta).unwrap();
    assert!(r.gamma_contains(gamma), "{r:?}");
    assert!(r.region.len() < grid.n_cells());
}
