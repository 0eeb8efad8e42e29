//! Estimator-quality sweeps over (γ, n̄, k): bias and spread maps, stability
//! against the number of scans, consistency thresholds, and MCM interval
//! quality.
//!
//! Every repetition of every cell draws its observed batch from a seed
//! derived from the base seed and the cell's (γ, n̄, repetition) values, so the
//! median and the MCM see identical batches and a cell's result does not
//! depend on the rest of the sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    build_linewidth_histogram_from, ivw_estimate, lognormal_fit, median, median_in_place, LinewidthSampleSet,
};
use crate::fitting::{simulate_linewidths, BatchSummary, Linewidth};
use crate::mcm::{confidence_region, ExpectedLibrary, FixedModel, GridSpec, McmConfig};
use crate::rng::{derive_seed, derive_tagged, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyEstimator {
    Median,
    Ivw,
    Lognormal,
    Mcm,
}

/// The MCM grid laid around each truth cell, with the replica count and
/// library seed. One library per cell serves all repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmSweep {
    pub gamma_halfwidth: f64,
    pub gamma_step: f64,
    pub nbar_halfwidth: f64,
    pub nbar_step: f64,
    pub config: McmConfig,
}

impl Default for McmSweep {
    fn default() -> Self {
        Self {
            gamma_halfwidth: 6.0,
            gamma_step: 1.0,
            nbar_halfwidth: 12.0,
            nbar_step: 2.0,
            config: McmConfig::default(),
        }
    }
}

impl McmSweep {
    pub fn grid_around(&self, gamma: f64, nbar: f64) -> Result<GridSpec> {
        let g_lo = (gamma - self.gamma_halfwidth).max(self.gamma_step);
        let n_lo = (nbar - self.nbar_halfwidth).max(self.nbar_step);
        GridSpec::from_ranges(
            (g_lo, gamma + self.gamma_halfwidth, self.gamma_step),
            (n_lo, nbar + self.nbar_halfwidth, self.nbar_step),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// True linewidths, MHz FWHM.
    pub gammas: Vec<f64>,
    pub nbars: Vec<f64>,
    pub scans: usize,
    pub repetitions: usize,
    pub estimator: StudyEstimator,
    pub model: FixedModel,
    pub mcm: McmSweep,
    pub seed: u64,
}

impl SweepSpec {
    /// Desk-scale defaults: R = 50, k = 2000.
    pub fn new(gammas: Vec<f64>, nbars: Vec<f64>, estimator: StudyEstimator, seed: u64) -> Result<Self> {
        let s = Self {
            gammas,
            nbars,
            scans: 2000,
            repetitions: 50,
            estimator,
            model: FixedModel::default(),
            mcm: McmSweep::default(),
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.nbars.is_empty() {
            return Err(Error::InvalidParameter("sweep axes must be non-empty".into()));
        }
        if self.repetitions == 0 || self.scans == 0 {
            return Err(Error::InvalidParameter("repetitions and scans must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed of the observed batch for repetition `rep` of cell (γ, n̄).
pub fn repetition_seed(seed: u64, gamma: f64, nbar: f64, rep: usize) -> u64 {
    let cell = derive_seed(derive_seed(seed, gamma.to_bits()), nbar.to_bits());
    derive_tagged(cell, tags::REPETITION, rep as u64)
}

/// Usable linewidths of one simulated observed batch.
pub fn observed_batch(
    model: &FixedModel,
    gamma: f64,
    nbar: f64,
    scans: usize,
    seed: u64,
) -> Result<(Vec<Linewidth>, BatchSummary)> {
    let scan_model = model.scan_model(gamma, nbar, seed)?;
    simulate_linewidths(&scan_model, scans, &model.acceptance, &model.fit)
}

/// Mean and standard deviation of repetition results. `std` is 0 for a
/// single value.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn point_estimate(kind: StudyEstimator, lw: &[Linewidth], summary: &BatchSummary) -> Result<f64> {
    let set = LinewidthSampleSet::from_linewidths(lw, summary, None);
    match kind {
        StudyEstimator::Median => median(set.fwhms()),
        StudyEstimator::Ivw => Ok(ivw_estimate(&set.with_positive_stderr())?.value),
        StudyEstimator::Lognormal => Ok(lognormal_fit(set.fwhms())?.median()),
        StudyEstimator::Mcm => Err(Error::Config("MCM estimates need a library; use mcm_quality_sweep".into())),
    }
}

/// Per-cell statistics over the repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub gamma: f64,
    pub nbar: f64,
    pub scans: usize,
    pub repetitions: usize,
    pub dropped: usize,
    pub mean: f64,
    /// `|⟨γ̂⟩ − γ|`.
    pub bias: f64,
    /// `(⟨γ̂⟩ − γ) / γ`, signed.
    pub rel_bias: f64,
    pub std: f64,
    pub rel_std: f64,
    /// Mean relative 99% interval width, MCM only.
    pub rel_ci_width: Option<f64>,
    /// Fraction of repetitions whose γ interval holds the truth, MCM only.
    pub coverage: Option<f64>,
    /// Repetitions whose confidence region touched the grid edge, MCM only.
    pub boundary_hits: Option<usize>,
    /// Smallest k whose mean relative interval half-width is at most 2%, MCM
    /// only and only when a k list was swept.
    pub scans_needed: Option<usize>,
    /// More than 20% of repetitions dropped.
    pub flagged: bool,
    /// Fewer than two usable repetitions, so `std` carries no information.
    pub degenerate: bool,
}

impl CellStats {
    fn from_values(gamma: f64, nbar: f64, scans: usize, repetitions: usize, values: &[f64]) -> Self {
        let dropped = repetitions - values.len();
        let (mean, std) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(values)
        };
        Self {
            gamma,
            nbar,
            scans,
            repetitions,
            dropped,
            mean,
            bias: (mean - gamma).abs(),
            rel_bias: (mean - gamma) / gamma,
            std,
            rel_std: std / gamma,
            rel_ci_width: None,
            coverage: None,
            boundary_hits: None,
            scans_needed: None,
            flagged: dropped * 5 > repetitions,
            degenerate: values.len() < 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: SweepSpec,
    /// γ-major: `cells[gi * nbars.len() + ni]`.
    pub cells: Vec<CellStats>,
}

impl StudyReport {
    pub fn cell(&self, gi: usize, ni: usize) -> &CellStats {
        &self.cells[gi * self.spec.nbars.len() + ni]
    }

    /// CSV matrix of one metric, γ rows by n̄ columns. Missing values are
    /// left empty.
    pub fn matrix_csv(&self, metric: impl Fn(&CellStats) -> Option<f64>) -> String {
        let mut out = String::from("gamma_mhz");
        for n in &self.spec.nbars {
            out.push_str(&format!(",{n}"));
        }
        out.push('\n');
        for (gi, g) in self.spec.gammas.iter().enumerate() {
            out.push_str(&g.to_string());
            for ni in 0..self.spec.nbars.len() {
                match metric(self.cell(gi, ni)).filter(|v| v.is_finite()) {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// The standard set of matrices, by file stem.
    pub fn matrices(&self) -> Vec<(&'static str, String)> {
        let mut m = vec![
            ("bias", self.matrix_csv(|c| Some(c.bias))),
            ("rel_bias", self.matrix_csv(|c| Some(c.rel_bias))),
            ("std", self.matrix_csv(|c| Some(c.std))),
            ("rel_std", self.matrix_csv(|c| Some(c.rel_std))),
            ("dropped", self.matrix_csv(|c| Some(c.dropped as f64))),
        ];
        if self.spec.estimator == StudyEstimator::Mcm {
            m.push(("rel_ci_width", self.matrix_csv(|c| c.rel_ci_width)));
            m.push(("coverage", self.matrix_csv(|c| c.coverage)));
            m.push(("scans_needed", self.matrix_csv(|c| c.scans_needed.map(|k| k as f64))));
        }
        m
    }
}

/// R independent pipelines per (γ, n̄) cell; a repetition whose estimator
/// fails is dropped and counted.
pub fn bias_sweep(spec: &SweepSpec) -> Result<StudyReport> {
    spec.validate()?;
    if spec.estimator == StudyEstimator::Mcm {
        return mcm_quality_sweep(spec, &[]);
    }
    let mut cells = Vec::with_capacity(spec.gammas.len() * spec.nbars.len());
    for &gamma in &spec.gammas {
        for &nbar in &spec.nbars {
            let values: Vec<f64> = (0..spec.repetitions)
                .map(|r| {
                    let seed = repetition_seed(spec.seed, gamma, nbar, r);
                    let (lw, summary) = observed_batch(&spec.model, gamma, nbar, spec.scans, seed)?;
                    Ok(point_estimate(spec.estimator, &lw, &summary).ok())
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            cells.push(CellStats::from_values(gamma, nbar, spec.scans, spec.repetitions, &values));
        }
    }
    Ok(StudyReport {
        spec: spec.clone(),
        cells,
    })
}

/// MCM bias, interval width and coverage per cell. With a non-empty `ks`
/// list each repetition's batch of `max(ks)` scans is also searched on its
/// prefixes to find the scans needed for a 2% interval half-width.
pub fn mcm_quality_sweep(spec: &SweepSpec, ks: &[usize]) -> Result<StudyReport> {
    spec.validate()?;
    check_increasing(ks)?;
    let k_max = ks.last().copied().unwrap_or(spec.scans).max(spec.scans);
    let scheme = spec.mcm.config.scheme;
    let mut cells = Vec::new();
    for &gamma in &spec.gammas {
        for &nbar in &spec.nbars {
            let grid = spec.mcm.grid_around(gamma, nbar)?;
            let library = ExpectedLibrary::build(
                &grid,
                &spec.model,
                &scheme,
                spec.mcm.config.replicas_for(k_max),
                derive_seed(derive_seed(spec.mcm.config.seed, gamma.to_bits()), nbar.to_bits()),
            )?;
            let search = |lw: &[Linewidth], k: usize| -> Option<(f64, f64, bool, bool)> {
                let fwhms: Vec<f64> = lw.iter().take_while(|l| l.scan < k).map(|l| l.fwhm).collect();
                let h = build_linewidth_histogram_from(&fwhms, k, &scheme).ok()?;
                let r = confidence_region(&library.search(&h).ok()?, spec.mcm.config.delta).ok()?;
                let width = (r.gamma_ci.1 - r.gamma_ci.0) / gamma;
                Some((r.best_gamma, width, r.gamma_contains(gamma), r.boundary_hit))
            };
            let mut estimates = Vec::new();
            let (mut widths, mut covered, mut hits) = (Vec::new(), 0usize, 0usize);
            let mut half_widths = vec![Vec::new(); ks.len()];
            for r in 0..spec.repetitions {
                let seed = repetition_seed(spec.seed, gamma, nbar, r);
                let (lw, _) = observed_batch(&spec.model, gamma, nbar, k_max, seed)?;
                if let Some((g, w, c, b)) = search(&lw, spec.scans) {
                    estimates.push(g);
                    widths.push(w);
                    covered += c as usize;
                    hits += b as usize;
                }
                for (j, &k) in ks.iter().enumerate() {
                    if let Some((_, w, _, _)) = search(&lw, k) {
                        half_widths[j].push(0.5 * w);
                    }
                }
            }
            let mut cell = CellStats::from_values(gamma, nbar, spec.scans, spec.repetitions, &estimates);
            if !widths.is_empty() {
                cell.rel_ci_width = Some(mean_std(&widths).0);
                cell.coverage = Some(covered as f64 / widths.len() as f64);
            }
            cell.boundary_hits = Some(hits);
            cell.scans_needed = ks
                .iter()
                .zip(&half_widths)
                .find(|(_, hw)| !hw.is_empty() && mean_std(hw).0 <= 0.02)
                .map(|(&k, _)| k);
            cells.push(cell);
        }
    }
    Ok(StudyReport {
        spec: spec.clone(),
        cells,
    })
}

fn check_increasing(ks: &[usize]) -> Result<()> {
    if ks.iter().any(|&k| k == 0) || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("k list must be strictly increasing and positive".into()));
    }
    Ok(())
}

/// Spread of the median against the number of scans at one true linewidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub gamma: f64,
    pub nbars: Vec<f64>,
    pub ks: Vec<usize>,
    pub repetitions: usize,
    /// `rows[ni][ki]`.
    pub rows: Vec<Vec<StabilityPoint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub mean: f64,
    pub std: f64,
    pub rel_std: f64,
    /// Repetitions with no usable fit among the first k scans.
    pub dropped: usize,
}

impl StabilityCurve {
    /// Smallest swept k from which the relative std stays below `level` for
    /// this n̄ row.
    pub fn settles_below(&self, ni: usize, level: f64) -> Option<usize> {
        let row = &self.rows[ni];
        (0..row.len())
            .find(|&i| row[i..].iter().all(|p| p.rel_std < level))
            .map(|i| self.ks[i])
    }

    /// n̄ rows by k columns.
    pub fn matrix_csv(&self, metric: impl Fn(&StabilityPoint) -> f64) -> String {
        let mut out = String::from("nbar");
        for k in &self.ks {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for (ni, n) in self.nbars.iter().enumerate() {
            out.push_str(&n.to_string());
            for p in &self.rows[ni] {
                let v = metric(p);
                if v.is_finite() {
                    out.push_str(&format!(",{v:.6}"));
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per (n̄, k): the spread over R repetitions of the median of the first k
/// scans. Each repetition draws one batch of `max(ks)` scans and reads its
/// prefixes, so the curve for one repetition is a running estimate.
pub fn stability_curve(
    gamma: f64,
    nbars: &[f64],
    ks: &[usize],
    repetitions: usize,
    model: &FixedModel,
    seed: u64,
) -> Result<StabilityCurve> {
    check_increasing(ks)?;
    if nbars.is_empty() || ks.is_empty() || repetitions == 0 {
        return Err(Error::InvalidParameter("stability curve needs n̄ values, k values and R ≥ 1".into()));
    }
    let k_max = *ks.last().unwrap();
    let mut rows = Vec::new();
    for &nbar in nbars {
        let per_rep: Vec<Vec<Option<f64>>> = (0..repetitions)
            .map(|r| {
                let (lw, _) = observed_batch(model, gamma, nbar, k_max, repetition_seed(seed, gamma, nbar, r))?;
                Ok(ks
                    .iter()
                    .map(|&k| {
                        let mut v: Vec<f64> = lw.iter().take_while(|l| l.scan < k).map(|l| l.fwhm).collect();
                        (!v.is_empty()).then(|| median_in_place(&mut v))
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        let row = (0..ks.len())
            .map(|ki| {
                let vals: Vec<f64> = per_rep.iter().filter_map(|r| r[ki]).collect();
                let (mean, std) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&vals) };
                StabilityPoint {
                    mean,
                    std,
                    rel_std: std / gamma,
                    dropped: repetitions - vals.len(),
                }
            })
            .collect();
        rows.push(row);
    }
    Ok(StabilityCurve {
        gamma,
        nbars: nbars.to_vec(),
        ks: ks.to_vec(),
        repetitions,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySpec {
    /// Relative precision window.
    pub precision: f64,
    /// Required fraction of repetitions inside the window.
    pub confidence: f64,
    pub scans: usize,
    pub repetitions: usize,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self {
            precision: 0.02,
            confidence: 0.99,
            scans: 2000,
            repetitions: 100,
        }
    }
}

/// Outcome of one n̄ probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProbe {
    pub nbar: f64,
    pub passed: bool,
    /// Repetitions run before the outcome was decided.
    pub evaluated: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub gamma: f64,
    /// Smallest passing n̄ on the grid, or the upper edge when unresolved.
    pub nbar_star: f64,
    pub resolved: bool,
    /// Grid spacing below `nbar_star`: the threshold lies in
    /// `(nbar_star - step, nbar_star]`.
    pub step: f64,
    pub probes: Vec<ThresholdProbe>,
}

/// Whether at least `confidence` of the repetitions put the median within
/// `precision` of `gamma`. Repetitions run in order and stop as soon as the
/// outcome is certain, so the result does not depend on scheduling.
pub fn consistency_probe(
    gamma: f64,
    nbar: f64,
    spec: &ConsistencySpec,
    model: &FixedModel,
    seed: u64,
) -> Result<ThresholdProbe> {
    let allowed = ((1.0 - spec.confidence) * spec.repetitions as f64 + 1e-9).floor() as usize;
    let mut failures = 0;
    let mut evaluated = 0;
    for r in 0..spec.repetitions {
        let (lw, _) = observed_batch(model, gamma, nbar, spec.scans, repetition_seed(seed, gamma, nbar, r))?;
        let fwhms: Vec<f64> = lw.iter().map(|l| l.fwhm).collect();
        let inside = median(&fwhms).is_ok_and(|m| ((m - gamma) / gamma).abs() <= spec.precision);
        evaluated += 1;
        failures += !inside as usize;
        if failures > allowed {
            break;
        }
    }
    Ok(ThresholdProbe {
        nbar,
        passed: failures <= allowed,
        evaluated,
        failures,
    })
}

/// Smallest n̄ on the sorted grid `nbars` that passes [`consistency_probe`],
/// by bisection on the assumption that passing is monotone in n̄.
pub fn consistency_threshold(
    gamma: f64,
    nbars: &[f64],
    spec: &ConsistencySpec,
    model: &FixedModel,
    seed: u64,
) -> Result<Threshold> {
    if nbars.is_empty() || nbars.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("n̄ grid must be non-empty and increasing".into()));
    }
    if !(spec.precision > 0.0 && spec.confidence > 0.0 && spec.confidence <= 1.0 && spec.repetitions > 0) {
        return Err(Error::InvalidParameter(format!("invalid consistency spec {spec:?}")));
    }
    let mut probes = Vec::new();
    let mut probe = |i: usize| -> Result<bool> {
        let p = consistency_probe(gamma, nbars[i], spec, model, seed)?;
        probes.push(p);
        Ok(p.passed)
    };
    let last = nbars.len() - 1;
    let step_below = |i: usize| if i == 0 { f64::NAN } else { nbars[i] - nbars[i - 1] };
    if !probe(last)? {
        return Ok(Threshold {
            gamma,
            nbar_star: nbars[last],
            resolved: false,
            step: step_below(last),
            probes,
        });
    }
    // invariant: nbars[hi] passes; everything at or below lo is unknown or fails
    let (mut lo, mut hi) = (0usize, last);
    if probe(0)? {
        hi = 0;
    } else {
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if probe(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(Threshold {
        gamma,
        nbar_star: nbars[hi],
        resolved: true,
        step: step_below(hi),
        probes,
    })
}

/// [`consistency_threshold`] for several linewidths, in parallel.
pub fn consistency_thresholds(
    gammas: &[f64],
    nbars: &[f64],
    spec: &ConsistencySpec,
    model: &FixedModel,
    seed: u64,
) -> Result<Vec<Threshold>> {
    gammas
        .par_iter()
        .map(|&g| consistency_threshold(g, nbars, spec, model, seed))
        .collect()
}
