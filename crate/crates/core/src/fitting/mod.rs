//! Per-scan Voigt least-squares fits, the acceptance filter and FWHM
//! extraction.

pub mod lm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lineshape::{tied_fwhm_per_sigma, voigt_fwhm, voigt_fwhm_gradient, voigt_with_gradient, VoigtParams};
use crate::synth::{Scan, ScanGenerator, ScanModel};
use lm::{masked_inverse, minimize, LmSettings, Normal, Termination};

/// Lower bound on the Gaussian width during fits, in MHz.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// A scan enters the analysis if at least one bin holds `min_counts_per_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceRule {
    pub min_counts_per_bin: u32,
}

impl Default for AcceptanceRule {
    fn default() -> Self {
        Self { min_counts_per_bin: 3 }
    }
}

impl AcceptanceRule {
    pub fn new(min_counts_per_bin: u32) -> Result<Self> {
        if min_counts_per_bin < 1 {
            return Err(crate::Error::InvalidParameter("min_counts_per_bin must be at least 1".into()));
        }
        Ok(Self { min_counts_per_bin })
    }
}

pub fn accept_scan(scan: &Scan, rule: &AcceptanceRule) -> bool {
    scan.max_count() >= rule.min_counts_per_bin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// γ = σ, one width parameter.
    Tied,
    /// Independent σ and γ.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Unweighted,
    /// Residuals scaled by `1/√max(count, 1)`.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub mode: FitMode,
    pub weighting: Weighting,
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    /// Free-mode fits of scans with fewer non-zero bins are not attempted.
    pub min_nonzero_bins_free: usize,
    /// Fit a constant baseline. Off by default: a free offset soaks up the
    /// Lorentzian wings of sparse scans and biases the width low.
    pub fit_offset: bool,
    pub acceptance: AcceptanceRule,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Free,
            weighting: Weighting::Unweighted,
            max_iterations: 200,
            cost_tolerance: 1e-8,
            min_nonzero_bins_free: 4,
            fit_offset: false,
            acceptance: AcceptanceRule::default(),
        }
    }
}

impl FitConfig {
    pub fn tied() -> Self {
        Self {
            mode: FitMode::Tied,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Filtered out by the acceptance rule; no fit attempted.
    Rejected,
    MaxIterations,
    /// Too few non-zero bins to constrain the model.
    Degenerate,
    NonFinite,
}

/// Standard errors of the Voigt parameters. `None` where the parameter sat on
/// a bound (held fixed), was tied, or the covariance was singular.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamErrors {
    pub amplitude: Option<f64>,
    pub center: Option<f64>,
    pub sigma: Option<f64>,
    pub gamma: Option<f64>,
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: VoigtParams,
    pub fwhm: f64,
    pub stderr_fwhm: Option<f64>,
    pub stderrs: ParamErrors,
    pub rss: f64,
    pub iterations: usize,
    pub status: FitStatus,
    pub converged: bool,
    pub accepted: bool,
}

impl FitResult {
    fn unfitted(status: FitStatus) -> Self {
        Self {
            params: VoigtParams {
                amplitude: f64::NAN,
                center: f64::NAN,
                sigma: f64::NAN,
                gamma: f64::NAN,
                offset: f64::NAN,
            },
            fwhm: f64::NAN,
            stderr_fwhm: None,
            stderrs: ParamErrors::default(),
            rss: f64::NAN,
            iterations: 0,
            status,
            converged: false,
            accepted: false,
        }
    }

    /// Whether this fit feeds the linewidth estimators.
    pub fn usable(&self) -> bool {
        self.accepted && self.converged
    }
}

struct Data {
    x: Vec<f64>,
    y: Vec<f64>,
    weight: Vec<f64>,
}

fn median_count(counts: &[u32]) -> f64 {
    let mut v: Vec<u32> = counts.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] as f64 + v[n / 2] as f64)
    }
}

/// Starting point: count-weighted centroid, area from the total, width from
/// the second moment, baseline from the median bin.
fn initial_guess(scan: &Scan) -> VoigtParams {
    let w = &scan.window;
    let total: f64 = scan.counts.iter().map(|&c| c as f64).sum();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (i, &c) in scan.counts.iter().enumerate() {
        let x = w.bin_center(i);
        m1 += c as f64 * x;
        m2 += c as f64 * x * x;
    }
    let (center, sd) = if total > 0.0 {
        let mu = m1 / total;
        let var = (m2 / total - mu * mu).max(0.0);
        (mu, var.sqrt())
    } else {
        (w.midpoint(), w.span() / 4.0)
    };
    // σ = γ chosen so the starting Voigt has the FWHM of a Gaussian with this
    // second moment.
    let width = (crate::lineshape::GAUSS_FWHM_PER_SIGMA * sd.max(0.5 * w.bin_width)) / tied_fwhm_per_sigma();
    VoigtParams {
        amplitude: total * w.bin_width,
        center,
        sigma: width.max(SIGMA_FLOOR),
        gamma: width,
        offset: median_count(&scan.counts),
    }
}

fn accumulate<const P: usize>(
    data: &Data,
    params: &VoigtParams,
    map: impl Fn(&VoigtParams, &[f64; 5]) -> [f64; P],
) -> Normal<P> {
    let mut n = Normal {
        cost: 0.0,
        jtj: [[0.0; P]; P],
        jtr: [0.0; P],
    };
    for ((&x, &y), &wt) in data.x.iter().zip(&data.y).zip(&data.weight) {
        let (v, g5) = voigt_with_gradient(x, params);
        let r = (v - y) * wt;
        let g = map(params, &g5).map(|d| d * wt);
        n.cost += 0.5 * r * r;
        for i in 0..P {
            n.jtr[i] += g[i] * r;
            for j in 0..=i {
                n.jtj[i][j] += g[i] * g[j];
            }
        }
    }
    for i in 0..P {
        for j in 0..i {
            n.jtj[j][i] = n.jtj[i][j];
        }
    }
    n
}

/// Fits one scan with a Voigt profile by bounded least squares.
///
/// The scan is fitted regardless of the acceptance rule; `accepted` is set
/// only if the rule passes and the fit converged.
pub fn fit_voigt_scan(scan: &Scan, config: &FitConfig) -> FitResult {
    let w = scan.window;
    let nonzero = scan.counts.iter().filter(|&&c| c > 0).count();
    let min_nonzero = match config.mode {
        FitMode::Free => config.min_nonzero_bins_free,
        FitMode::Tied => 1,
    };
    if nonzero < min_nonzero {
        return FitResult::unfitted(FitStatus::Degenerate);
    }

    let data = Data {
        x: w.bin_centers(),
        y: scan.counts.iter().map(|&c| c as f64).collect(),
        weight: match config.weighting {
            Weighting::Unweighted => vec![1.0; scan.counts.len()],
            Weighting::Poisson => scan.counts.iter().map(|&c| 1.0 / (c.max(1) as f64).sqrt()).collect(),
        },
    };
    let mut guess = initial_guess(scan);
    let offset_hi = if config.fit_offset { f64::INFINITY } else { 0.0 };
    if !config.fit_offset {
        guess.offset = 0.0;
    }
    let settings = LmSettings {
        max_iterations: config.max_iterations,
        cost_tolerance: config.cost_tolerance,
        ..LmSettings::default()
    };

    let solved = match config.mode {
        // The Gaussian width enters as its variance: the profile is smooth in
        // σ² at σ = 0, where the σ-gradient vanishes and stalls the search.
        FitMode::Free => {
            let mut solved = solve(
                &data,
                [guess.amplitude, guess.center, guess.sigma * guess.sigma, guess.gamma, guess.offset],
                [0.0, w.lo, SIGMA_FLOOR * SIGMA_FLOOR, 0.0, 0.0],
                [f64::INFINITY, w.hi, f64::INFINITY, f64::INFINITY, offset_hi],
                &settings,
                |p| VoigtParams {
                    amplitude: p[0],
                    center: p[1],
                    sigma: p[2].sqrt(),
                    gamma: p[3],
                    offset: p[4],
                },
                |p, g| [g[0], g[1], g[2] / (2.0 * p.sigma), g[3], g[4]],
            );
            // back to σ: dσ/d(σ²) = 1/(2σ)
            let ds = 1.0 / (2.0 * solved.params.sigma);
            if let Some(c) = solved.covariance.as_mut() {
                for j in 0..5 {
                    c[2][j] *= ds;
                    c[j][2] *= ds;
                }
            }
            solved
        }
        // With γ = σ the width derivative is the sum of the σ and γ partials.
        FitMode::Tied => solve(
            &data,
            [guess.amplitude, guess.center, guess.sigma, guess.offset],
            [0.0, w.lo, SIGMA_FLOOR, 0.0],
            [f64::INFINITY, w.hi, f64::INFINITY, offset_hi],
            &settings,
            |p| VoigtParams {
                amplitude: p[0],
                center: p[1],
                sigma: p[2],
                gamma: p[2],
                offset: p[3],
            },
            |_, g| [g[0], g[1], g[2] + g[3], g[4]],
        ),
    };

    let status = match solved.termination {
        t if t.converged() => FitStatus::Converged,
        Termination::MaxIterations => FitStatus::MaxIterations,
        _ => FitStatus::NonFinite,
    };
    let params = solved.params;
    let fwhm = voigt_fwhm(params.sigma, params.gamma).unwrap_or(f64::NAN);
    let converged = status == FitStatus::Converged && fwhm > 0.0;
    let cov = solved.covariance.as_ref();
    let stderr = |i: usize| -> Option<f64> {
        let c = cov?;
        let v = c[i][i];
        (solved.free[i] && v.is_finite() && v >= 0.0).then(|| v.sqrt())
    };

    let (stderrs, stderr_fwhm) = match config.mode {
        FitMode::Free => {
            let stderr_fwhm = cov.map(|c| {
                let (ds, dg) = voigt_fwhm_gradient(params.sigma, params.gamma);
                (ds * ds * c[2][2] + 2.0 * ds * dg * c[2][3] + dg * dg * c[3][3]).max(0.0).sqrt()
            });
            let stderrs = ParamErrors {
                amplitude: stderr(0),
                center: stderr(1),
                sigma: stderr(2),
                gamma: stderr(3),
                offset: stderr(4),
            };
            (stderrs, stderr_fwhm)
        }
        FitMode::Tied => {
            let stderrs = ParamErrors {
                amplitude: stderr(0),
                center: stderr(1),
                sigma: stderr(2),
                gamma: None,
                offset: stderr(3),
            };
            (stderrs, cov.map(|c| tied_fwhm_per_sigma() * c[2][2].max(0.0).sqrt()))
        }
    };

    FitResult {
        params,
        fwhm,
        stderr_fwhm: stderr_fwhm.filter(|s| s.is_finite()),
        stderrs,
        rss: solved.rss,
        iterations: solved.iterations,
        status,
        converged,
        accepted: converged && accept_scan(scan, &config.acceptance),
    }
}

struct Solved {
    params: VoigtParams,
    rss: f64,
    iterations: usize,
    termination: Termination,
    /// Parameters strictly inside their bounds.
    free: Vec<bool>,
    covariance: Option<Vec<Vec<f64>>>,
}

fn solve<const P: usize>(
    data: &Data,
    start: [f64; P],
    lower: [f64; P],
    upper: [f64; P],
    settings: &LmSettings,
    to_params: impl Fn(&[f64; P]) -> VoigtParams,
    map: impl Fn(&VoigtParams, &[f64; 5]) -> [f64; P] + Copy,
) -> Solved {
    let out = minimize(|p| accumulate(data, &to_params(p), map), start, lower, upper, settings);
    let free: [bool; P] = std::array::from_fn(|i| out.params[i] > lower[i] && out.params[i] < upper[i]);
    let rss = 2.0 * out.normal.cost;
    let termination = if rss.is_finite() { out.termination } else { Termination::NonFinite };
    Solved {
        params: to_params(&out.params),
        rss,
        iterations: out.iterations,
        termination,
        free: free.to_vec(),
        covariance: covariance(&out.normal.jtj, &free, rss, data.x.len()).map(|c| c.iter().map(|r| r.to_vec()).collect()),
    }
}

/// Parameter covariance `s² (JᵀJ)⁻¹` over the parameters not pinned at a
/// bound, with `s² = RSS / (n - p)`.
fn covariance<const P: usize>(jtj: &[[f64; P]; P], free: &[bool; P], rss: f64, n: usize) -> Option<[[f64; P]; P]> {
    let p = free.iter().filter(|&&f| f).count();
    if p == 0 || n <= p {
        return None;
    }
    let s2 = rss / (n - p) as f64;
    masked_inverse(jtj, free).map(|inv| inv.map(|row| row.map(|v| v * s2)))
}

/// Filter, then fit.
pub fn fit_scan(scan: &Scan, rule: &AcceptanceRule, config: &FitConfig) -> FitResult {
    if !accept_scan(scan, rule) {
        return FitResult::unfitted(FitStatus::Rejected);
    }
    let config = FitConfig {
        acceptance: *rule,
        ..*config
    };
    fit_voigt_scan(scan, &config)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub total: usize,
    pub rejected: usize,
    pub not_converged: usize,
    pub fitted: usize,
}

impl BatchSummary {
    fn record(&mut self, r: &FitResult) {
        self.total += 1;
        match r.status {
            FitStatus::Rejected => self.rejected += 1,
            _ if r.usable() => self.fitted += 1,
            _ => self.not_converged += 1,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.total += other.total;
        self.rejected += other.rejected;
        self.not_converged += other.not_converged;
        self.fitted += other.fitted;
        self
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.fitted as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFit {
    pub results: Vec<FitResult>,
    pub summary: BatchSummary,
}

impl BatchFit {
    pub fn usable(&self) -> impl Iterator<Item = &FitResult> {
        self.results.iter().filter(|r| r.usable())
    }
}

/// Applies the acceptance rule and the fit to every scan, in input order.
pub fn fit_batch(scans: &[Scan], rule: &AcceptanceRule, config: &FitConfig) -> BatchFit {
    let results: Vec<FitResult> = scans.par_iter().map(|s| fit_scan(s, rule, config)).collect();
    let mut summary = BatchSummary::default();
    for r in &results {
        summary.record(r);
    }
    BatchFit { results, summary }
}

/// FWHM and standard error of one usable fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linewidth {
    /// Index of the scan within its batch.
    pub scan: usize,
    pub fwhm: f64,
    pub stderr: f64,
}

/// Simulates `k` scans from `model` and fits them without keeping the scans;
/// returns the usable linewidths in scan order.
pub fn simulate_linewidths(
    model: &ScanModel,
    k: usize,
    rule: &AcceptanceRule,
    config: &FitConfig,
) -> Result<(Vec<Linewidth>, BatchSummary)> {
    let generator = ScanGenerator::new(model)?;
    let out: Vec<(Option<Linewidth>, BatchSummary)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let scan = generator.scan(i);
            let r = fit_scan(&scan, rule, config);
            let mut s = BatchSummary::default();
            s.record(&r);
            let lw = r.usable().then(|| Linewidth {
                scan: i,
                fwhm: r.fwhm,
                stderr: r.stderr_fwhm.unwrap_or(0.0),
            });
            (lw, s)
        })
        .collect();
    let summary = out.iter().fold(BatchSummary::default(), |a, (_, s)| a.merge(*s));
    Ok((out.into_iter().filter_map(|(l, _)| l).collect(), summary))
}
