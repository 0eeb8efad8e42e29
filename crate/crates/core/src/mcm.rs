//! Monte Carlo χ² reconstruction of (γ, n̄).
//!
//! For every cell of a (γ, n̄) grid the full synth + fit pipeline is run on
//! `M` simulated scans, the fitted linewidths are histogrammed, and the
//! histogram scaled by `k/M` becomes the expected occurrences `E` for an
//! observed batch of `k` scans. Sparse bins are merged until every `E ≥ 5`,
//! then `S = Σ (O - E)² / E`. The confidence region is `S ≤ S_min + Δ`.
//!
//! Rejected scans never reach a histogram, so `ΣE` falls with the model's
//! acceptance rate; the observed total carries the same information.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LinewidthHistogram;
use crate::fitting::{simulate_linewidths, AcceptanceRule, FitConfig};
use crate::lineshape::FrequencyWindow;
use crate::rng::{self, tags};
use crate::synth::ScanModel;

/// χ² 99% quantile for two free parameters.
pub const DELTA_99_TWO_PARAMS: f64 = 9.21;
/// χ² 99% quantile for one parameter, for marginal intervals.
pub const DELTA_99_ONE_PARAM: f64 = 6.63;

/// Raw linewidth bins: everything up to `narrow_cutoff` in one bin, then
/// `base_bin_width` bins up to `hi`. Linewidths above `hi` overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningScheme {
    pub narrow_cutoff: f64,
    pub base_bin_width: f64,
    pub hi: f64,
    pub min_expected: f64,
}

impl Default for BinningScheme {
    fn default() -> Self {
        Self {
            narrow_cutoff: 15.0,
            base_bin_width: 5.0,
            hi: 150.0,
            min_expected: 5.0,
        }
    }
}

impl BinningScheme {
    pub fn validate(&self) -> Result<()> {
        let ok = self.narrow_cutoff > 0.0
            && self.base_bin_width > 0.0
            && self.hi > self.narrow_cutoff
            && self.min_expected >= 1.0
            && [self.narrow_cutoff, self.base_bin_width, self.hi, self.min_expected]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid binning scheme {self:?}")))
        }
    }

    /// Raw bins, the sub-cutoff bin included and the overflow bin excluded.
    pub fn n_bins(&self) -> usize {
        1 + ((self.hi - self.narrow_cutoff) / self.base_bin_width - 1e-9).ceil() as usize
    }

    /// Raw bin of a linewidth, `None` above the range. Bins are closed on the
    /// right: 15 MHz belongs to the sub-cutoff bin.
    pub fn bin_of(&self, fwhm: f64) -> Option<usize> {
        if fwhm <= self.narrow_cutoff {
            Some(0)
        } else if fwhm > self.hi {
            None
        } else {
            let i = ((fwhm - self.narrow_cutoff) / self.base_bin_width).ceil() as usize;
            Some(i.clamp(1, self.n_bins() - 1))
        }
    }

    /// Upper edges of the raw bins.
    pub fn upper_edges(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|i| (self.narrow_cutoff + i as f64 * self.base_bin_width).min(self.hi))
            .collect()
    }
}

/// Histograms after merging. `groups[j]` is the inclusive range of raw bins
/// (overflow bin last) that make up merged bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedBins {
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub groups: Vec<(usize, usize)>,
    /// A merged bin with `E < min_expected` survived: the sub-cutoff bin is
    /// kept on its own whenever it has any expected mass.
    pub residual: bool,
}

/// Merges adjacent bins from the high-linewidth end inward until each holds
/// at least `min_expected` expected occurrences. Bin 0 is the sub-cutoff
/// bin; it is never merged unless its expectation is exactly zero. A short
/// group left over next to it is folded into its upper neighbour.
pub fn merge_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> Result<MergedBins> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            observed: observed.len(),
            expected: expected.len(),
        });
    }
    let total: f64 = expected.iter().sum();
    if expected.is_empty() || total < min_expected {
        return Err(Error::CannotBin { total, min: min_expected });
    }

    // Groups are collected high to low and reversed at the end.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(usize, usize)> = None;
    let mut acc = 0.0;
    for i in (1..expected.len()).rev() {
        pending = Some((i, pending.map_or(i, |(_, hi)| hi)));
        acc += expected[i];
        if acc >= min_expected {
            groups.push(pending.take().unwrap());
            acc = 0.0;
        }
    }
    if let Some((lo, hi)) = pending {
        match groups.last_mut() {
            Some(g) => g.0 = lo,
            None => groups.push((lo, hi)),
        }
    }
    groups.push((0, 0));
    groups.reverse();
    // A lone pending group with nothing above it, or an empty sub-cutoff bin,
    // joins its neighbour.
    if groups.len() > 1 && (expected[0] == 0.0 || sum(expected, groups[1]) < min_expected) {
        let upper = groups.remove(1);
        groups[0].1 = upper.1;
    }

    let merged_o: Vec<f64> = groups.iter().map(|&g| sum(observed, g)).collect();
    let merged_e: Vec<f64> = groups.iter().map(|&g| sum(expected, g)).collect();
    let residual = merged_e.iter().any(|&e| e < min_expected);
    Ok(MergedBins {
        observed: merged_o,
        expected: merged_e,
        groups,
        residual,
    })
}

fn sum(v: &[f64], (lo, hi): (usize, usize)) -> f64 {
    v[lo..=hi].iter().sum()
}

/// `S = Σ (O - E)² / E`.
pub fn chi2_statistic(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            observed: observed.len(),
            expected: expected.len(),
        });
    }
    let mut s = 0.0;
    for (bin, (&o, &e)) in observed.iter().zip(expected).enumerate() {
        if !(e > 0.0) {
            return Err(Error::ZeroExpected { bin });
        }
        s += (o - e).powi(2) / e;
    }
    Ok(s)
}

/// Everything about the simulation that the grid search holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedModel {
    pub photon_sigma: f64,
    pub noise_mean: f64,
    pub window: FrequencyWindow,
    pub acceptance: AcceptanceRule,
    pub fit: FitConfig,
}

impl Default for FixedModel {
    fn default() -> Self {
        Self {
            photon_sigma: 6.0,
            noise_mean: 2.0,
            window: FrequencyWindow::default(),
            acceptance: AcceptanceRule::default(),
            fit: FitConfig::default(),
        }
    }
}

impl FixedModel {
    pub fn scan_model(&self, gamma: f64, nbar: f64, seed: u64) -> Result<ScanModel> {
        ScanModel::new(gamma, nbar, self.photon_sigma, self.noise_mean, seed)?.with_window(self.window)
    }
}

/// Raw simulated histogram of one cell: raw bins with the overflow bin last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedHistogram {
    pub counts: Vec<u64>,
    pub replicas: usize,
    pub accepted: usize,
}

impl SimulatedHistogram {
    /// Expected occurrences for an observed batch of `scans` scans.
    pub fn scaled(&self, scans: usize) -> Vec<f64> {
        let f = scans as f64 / self.replicas as f64;
        self.counts.iter().map(|&c| c as f64 * f).collect()
    }
}

pub fn simulate_histogram(
    gamma: f64,
    nbar: f64,
    model: &FixedModel,
    replicas: usize,
    scheme: &BinningScheme,
    seed: u64,
) -> Result<SimulatedHistogram> {
    scheme.validate()?;
    if replicas == 0 {
        return Err(Error::InvalidParameter("replica count must be at least 1".into()));
    }
    let scan_model = model.scan_model(gamma, nbar, seed)?;
    let (lw, _) = simulate_linewidths(&scan_model, replicas, &model.acceptance, &model.fit)?;
    if lw.is_empty() {
        return Err(Error::DegenerateModel { replicas });
    }
    let mut counts = vec![0u64; scheme.n_bins() + 1];
    for l in &lw {
        counts[scheme.bin_of(l.fwhm).unwrap_or(scheme.n_bins())] += 1;
    }
    Ok(SimulatedHistogram {
        counts,
        replicas,
        accepted: lw.len(),
    })
}

/// Expected occurrences `E_i(γ, n̄)` per raw bin (overflow last), scaled to
/// `scans` observed scans. With `replicas == scans` and the seed of an
/// observed synthetic batch this reproduces that batch's histogram.
#[allow(clippy::too_many_arguments)]
pub fn expected_histogram(
    gamma: f64,
    nbar: f64,
    model: &FixedModel,
    replicas: usize,
    scans: usize,
    scheme: &BinningScheme,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(simulate_histogram(gamma, nbar, model, replicas, scheme, seed)?.scaled(scans))
}

/// Grid axes in MHz (FWHM) and mean signal photons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gammas: Vec<f64>,
    pub nbars: Vec<f64>,
}

impl GridSpec {
    pub fn new(gammas: Vec<f64>, nbars: Vec<f64>) -> Result<Self> {
        let g = Self { gammas, nbars };
        g.validate()?;
        Ok(g)
    }

    /// Inclusive arithmetic ranges.
    pub fn from_ranges(gamma: (f64, f64, f64), nbar: (f64, f64, f64)) -> Result<Self> {
        Self::new(axis_values(gamma)?, axis_values(nbar)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ax) in [("γ", &self.gammas), ("n̄", &self.nbars)] {
            if ax.is_empty() {
                return Err(Error::InvalidParameter(format!("{name} axis is empty")));
            }
            if ax.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidParameter(format!("{name} axis is not strictly increasing")));
            }
        }
        if self.gammas[0] <= 0.0 || self.nbars[0] < 0.0 {
            return Err(Error::InvalidParameter("grid axes must be positive".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.gammas.len() * self.nbars.len()
    }

    /// Row-major cell index, γ rows by n̄ columns.
    pub fn cell(&self, gi: usize, ni: usize) -> usize {
        gi * self.nbars.len() + ni
    }
}

/// `lo, lo + step, …` up to and including `hi` (within rounding).
pub fn axis_values((lo, hi, step): (f64, f64, f64)) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!("bad axis range {lo}..{hi} step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

pub fn cell_seed(seed: u64, cell: usize) -> u64 {
    rng::derive_tagged(seed, tags::CELL, cell as u64)
}

/// Simulated histograms for every cell of a grid. Building it is the
/// expensive part of the search; one library serves any number of observed
/// histograms with the same binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLibrary {
    pub grid: GridSpec,
    pub scheme: BinningScheme,
    pub replicas: usize,
    pub seed: u64,
    /// `None` where the model produced no accepted fit.
    pub cells: Vec<Option<SimulatedHistogram>>,
}

impl ExpectedLibrary {
    pub fn build(grid: &GridSpec, model: &FixedModel, scheme: &BinningScheme, replicas: usize, seed: u64) -> Result<Self> {
        grid.validate()?;
        scheme.validate()?;
        let cells = (0..grid.n_cells())
            .into_par_iter()
            .map(|c| {
                let (gi, ni) = (c / grid.nbars.len(), c % grid.nbars.len());
                match simulate_histogram(grid.gammas[gi], grid.nbars[ni], model, replicas, scheme, cell_seed(seed, c)) {
                    Ok(h) => Ok(Some(h)),
                    Err(Error::DegenerateModel { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            scheme: *scheme,
            replicas,
            seed,
            cells,
        })
    }

    /// χ² surface against one observed histogram. Cells whose model yields no
    /// fits or cannot be binned are masked; more than 10% masked is an error.
    pub fn search(&self, observed: &LinewidthHistogram) -> Result<McmGrid> {
        if observed.scheme != self.scheme {
            return Err(Error::Config("observed histogram uses a different binning scheme".into()));
        }
        let o = observed.with_overflow();
        let s: Vec<Option<f64>> = self
            .cells
            .iter()
            .map(|cell| {
                let e = cell.as_ref()?.scaled(observed.scans);
                let m = merge_bins(&o, &e, self.scheme.min_expected).ok()?;
                chi2_statistic(&m.observed, &m.expected).ok()
            })
            .collect();
        let masked = s.iter().filter(|v| v.is_none()).count();
        if masked * 10 > s.len() {
            return Err(Error::TooManyMasked {
                masked,
                total: s.len(),
            });
        }
        Ok(McmGrid {
            gammas: self.grid.gammas.clone(),
            nbars: self.grid.nbars.clone(),
            s,
            replicas: self.replicas,
            scale: observed.scans as f64 / self.replicas as f64,
            masked,
        })
    }
}

/// Search settings. `replicas = None` means ten times the observed scan count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmConfig {
    pub scheme: BinningScheme,
    pub replicas: Option<usize>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for McmConfig {
    fn default() -> Self {
        Self {
            scheme: BinningScheme::default(),
            replicas: None,
            delta: DELTA_99_TWO_PARAMS,
            seed: 0,
        }
    }
}

impl McmConfig {
    pub fn replicas_for(&self, scans: usize) -> usize {
        self.replicas.unwrap_or(10 * scans).max(1)
    }
}

pub fn grid_search(observed: &LinewidthHistogram, grid: &GridSpec, model: &FixedModel, config: &McmConfig) -> Result<McmGrid> {
    let library = ExpectedLibrary::build(grid, model, &config.scheme, config.replicas_for(observed.scans), config.seed)?;
    library.search(observed)
}

/// χ² surface, γ rows by n̄ columns. Masked cells hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmGrid {
    pub gammas: Vec<f64>,
    pub nbars: Vec<f64>,
    pub s: Vec<Option<f64>>,
    pub replicas: usize,
    /// `k / M`.
    pub scale: f64,
    pub masked: usize,
}

impl McmGrid {
    pub fn at(&self, gi: usize, ni: usize) -> Option<f64> {
        self.s[gi * self.nbars.len() + ni]
    }

    /// `gamma_mhz,nbar,s` rows; masked cells leave `s` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma_mhz,nbar,s\n");
        for (gi, g) in self.gammas.iter().enumerate() {
            for (ni, n) in self.nbars.iter().enumerate() {
                match self.at(gi, ni) {
                    Some(s) => out.push_str(&format!("{g},{n},{s:.6}\n")),
                    None => out.push_str(&format!("{g},{n},\n")),
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmResult {
    pub best_gamma: f64,
    pub best_nbar: f64,
    pub s_min: f64,
    pub delta: f64,
    /// `(γ index, n̄ index)` of every cell with `S ≤ S_min + Δ`.
    pub region: Vec<(usize, usize)>,
    pub gamma_ci: (f64, f64),
    pub nbar_ci: (f64, f64),
    /// The region reaches the edge of the grid, so the intervals may be
    /// truncated.
    pub boundary_hit: bool,
}

impl McmResult {
    pub fn gamma_contains(&self, gamma: f64) -> bool {
        self.gamma_ci.0 <= gamma && gamma <= self.gamma_ci.1
    }
}

/// Best cell and the `S ≤ S_min + Δ` region. Ties go to the first cell in
/// row-major order.
pub fn confidence_region(grid: &McmGrid, delta: f64) -> Result<McmResult> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("Δ must be non-negative, got {delta}")));
    }
    let nn = grid.nbars.len();
    let (best, s_min) = grid
        .s
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, m)) if m <= s => acc,
            _ => Some((i, s)),
        })
        .ok_or(Error::TooManyMasked {
            masked: grid.s.len(),
            total: grid.s.len(),
        })?;
    let region: Vec<(usize, usize)> = grid
        .s
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_some_and(|s| s <= s_min + delta))
        .map(|(i, _)| (i / nn, i % nn))
        .collect();
    let span = |vals: &mut dyn Iterator<Item = usize>| {
        let v: Vec<usize> = vals.collect();
        (*v.iter().min().unwrap(), *v.iter().max().unwrap())
    };
    let (g_lo, g_hi) = span(&mut region.iter().map(|c| c.0));
    let (n_lo, n_hi) = span(&mut region.iter().map(|c| c.1));
    let boundary_hit = g_lo == 0 || n_lo == 0 || g_hi + 1 == grid.gammas.len() || n_hi + 1 == nn;
    Ok(McmResult {
        best_gamma: grid.gammas[best / nn],
        best_nbar: grid.nbars[best % nn],
        s_min,
        delta,
        region,
        gamma_ci: (grid.gammas[g_lo], grid.gammas[g_hi]),
        nbar_ci: (grid.nbars[n_lo], grid.nbars[n_hi]),
        boundary_hit,
    })
}

#[cfg(test)]
mod tests;
