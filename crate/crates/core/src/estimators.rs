//! Point estimators over the distribution of single-scan FWHMs.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{BatchFit, BatchSummary, Linewidth};
use crate::mcm::BinningScheme;
use crate::rng::{self, tags};

/// Where a sample set came from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSource {
    /// Scans in the batch before filtering.
    pub scans: usize,
    /// Mean signal photon number, when known.
    pub mean_photons: Option<f64>,
}

/// FWHMs of the accepted, converged fits with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthSampleSet {
    fwhms: Vec<f64>,
    stderrs: Vec<f64>,
    pub source: SampleSource,
}

impl LinewidthSampleSet {
    pub fn new(fwhms: Vec<f64>, stderrs: Vec<f64>, source: SampleSource) -> Result<Self> {
        if fwhms.len() != stderrs.len() {
            return Err(Error::LengthMismatch {
                observed: fwhms.len(),
                expected: stderrs.len(),
            });
        }
        if let Some(i) = fwhms.iter().position(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParameter(format!("FWHM {} at sample {i} is not positive", fwhms[i])));
        }
        if let Some(i) = stderrs.iter().position(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("stderr {} at sample {i} is negative", stderrs[i])));
        }
        let source = SampleSource {
            scans: source.scans.max(fwhms.len()),
            ..source
        };
        Ok(Self { fwhms, stderrs, source })
    }

    /// Usable fits of a batch; fits without a standard error carry 0.
    pub fn from_batch(batch: &BatchFit, mean_photons: Option<f64>) -> Self {
        let (fwhms, stderrs) = batch.usable().map(|r| (r.fwhm, r.stderr_fwhm.unwrap_or(0.0))).unzip();
        Self {
            fwhms,
            stderrs,
            source: SampleSource {
                scans: batch.summary.total,
                mean_photons,
            },
        }
    }

    pub fn from_linewidths(lw: &[Linewidth], summary: &BatchSummary, mean_photons: Option<f64>) -> Self {
        Self {
            fwhms: lw.iter().map(|l| l.fwhm).collect(),
            stderrs: lw.iter().map(|l| l.stderr).collect(),
            source: SampleSource {
                scans: summary.total,
                mean_photons,
            },
        }
    }

    pub fn fwhms(&self) -> &[f64] {
        &self.fwhms
    }

    pub fn stderrs(&self) -> &[f64] {
        &self.stderrs
    }

    pub fn len(&self) -> usize {
        self.fwhms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwhms.is_empty()
    }

    pub fn rejected(&self) -> usize {
        self.source.scans - self.fwhms.len()
    }

    /// The subset with strictly positive standard errors, as IVW requires.
    pub fn with_positive_stderr(&self) -> Self {
        let (fwhms, stderrs) = self
            .fwhms
            .iter()
            .zip(&self.stderrs)
            .filter(|(_, &s)| s > 0.0)
            .map(|(&f, &s)| (f, s))
            .unzip();
        Self {
            fwhms,
            stderrs,
            source: self.source,
        }
    }
}

/// Value with a two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Two-sided coverage of the percentile interval.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.99,
            seed: 0,
        }
    }
}

/// Median, averaging the middle pair for even lengths. Reorders `v`.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let (_, &mut hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

pub fn median(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(median_in_place(&mut samples.to_vec()))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// Percentile bootstrap of `stat`. Resample `b` draws from its own stream, so
/// the interval does not depend on thread count.
pub fn bootstrap_ci(samples: &[f64], stat: impl Fn(&mut [f64]) -> f64 + Sync, config: &BootstrapConfig) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if config.resamples == 0 || !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::InvalidParameter("bootstrap needs resamples ≥ 1 and level in (0, 1)".into()));
    }
    let n = samples.len();
    let mut stats: Vec<f64> = (0..config.resamples)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, b| {
                let mut r = rng::StreamRng::seed_from_u64(rng::derive_tagged(config.seed, tags::BOOTSTRAP, b as u64));
                for x in buf.iter_mut() {
                    *x = samples[r.random_range(0..n)];
                }
                stat(buf)
            },
        )
        .collect();
    stats.sort_unstable_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - config.level);
    Ok((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

pub fn median_estimate(set: &LinewidthSampleSet, bootstrap: &BootstrapConfig) -> Result<Estimate> {
    let value = median(set.fwhms())?;
    let (ci_lo, ci_hi) = bootstrap_ci(set.fwhms(), median_in_place, bootstrap)?;
    Ok(Estimate { value, ci_lo, ci_hi })
}

/// Inverse-variance weighted mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvwEstimate {
    pub value: f64,
    pub stderr: f64,
}

pub fn ivw_estimate(set: &LinewidthSampleSet) -> Result<IvwEstimate> {
    if set.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(index) = set.stderrs().iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroStdErr { index });
    }
    // Weights relative to the largest keep Σw finite for tiny errors.
    let s_min = set.stderrs().iter().copied().fold(f64::INFINITY, f64::min);
    let (mut sw, mut swx) = (0.0, 0.0);
    for (&x, &s) in set.fwhms().iter().zip(set.stderrs()) {
        let w = (s_min / s).powi(2);
        sw += w;
        swx += w * x;
    }
    Ok(IvwEstimate {
        value: swx / sw,
        stderr: s_min / sw.sqrt(),
    })
}

/// Maximum-likelihood lognormal parameters of the log-samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalFit {
    pub mu_ln: f64,
    pub sigma_ln: f64,
}

impl LognormalFit {
    pub fn median(&self) -> f64 {
        self.mu_ln.exp()
    }
}

pub const LOGNORMAL_MIN_SAMPLES: usize = 10;

pub fn lognormal_fit(samples: &[f64]) -> Result<LognormalFit> {
    if samples.len() < LOGNORMAL_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: LOGNORMAL_MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(x) = samples.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("lognormal fit of non-positive sample {x}")));
    }
    let n = samples.len() as f64;
    let mu_ln = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let var = samples.iter().map(|x| (x.ln() - mu_ln).powi(2)).sum::<f64>() / n;
    Ok(LognormalFit {
        mu_ln,
        sigma_ln: var.sqrt(),
    })
}

pub fn lognormal_median(set: &LinewidthSampleSet) -> Result<f64> {
    Ok(lognormal_fit(set.fwhms())?.median())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Median,
    Ivw,
    Lognormal,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Median => "median",
            Self::Ivw => "ivw",
            Self::Lognormal => "lognormal",
        }
    }
}

/// Serialized estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: String,
    pub value_mhz: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub k_used: usize,
    pub k_rejected: usize,
}

/// Runs one estimator and packages it. The IVW interval is the normal one at
/// the bootstrap level, computed over the samples that have a standard error;
/// the lognormal interval is a percentile bootstrap of the lognormal median.
pub fn estimate(kind: EstimatorKind, set: &LinewidthSampleSet, bootstrap: &BootstrapConfig) -> Result<EstimatorReport> {
    let (used, est) = match kind {
        EstimatorKind::Median => (set.len(), median_estimate(set, bootstrap)?),
        EstimatorKind::Ivw => {
            let sub = set.with_positive_stderr();
            let ivw = ivw_estimate(&sub)?;
            let z = normal_quantile(0.5 + 0.5 * bootstrap.level);
            let est = Estimate {
                value: ivw.value,
                ci_lo: ivw.value - z * ivw.stderr,
                ci_hi: ivw.value + z * ivw.stderr,
            };
            (sub.len(), est)
        }
        EstimatorKind::Lognormal => {
            let value = lognormal_median(set)?;
            let stat = |v: &mut [f64]| {
                let m = v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64;
                m.exp()
            };
            let (ci_lo, ci_hi) = bootstrap_ci(set.fwhms(), stat, bootstrap)?;
            (set.len(), Estimate { value, ci_lo, ci_hi })
        }
    };
    Ok(EstimatorReport {
        estimator: kind.name().into(),
        value_mhz: est.value,
        ci_lo: est.ci_lo,
        ci_hi: est.ci_hi,
        k_used: used,
        k_rejected: set.source.scans - used,
    })
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Occurrences of fitted linewidths in the raw bins of a [`BinningScheme`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthHistogram {
    pub scheme: BinningScheme,
    /// One entry per raw bin, the sub-cutoff bin first.
    pub counts: Vec<u64>,
    /// Linewidths above the binning range.
    pub overflow: u64,
    /// Scans in the batch the histogram came from, rejected ones included.
    pub scans: usize,
}

impl LinewidthHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Raw bins followed by the overflow bin.
    pub fn with_overflow(&self) -> Vec<f64> {
        self.counts.iter().chain(std::iter::once(&self.overflow)).map(|&c| c as f64).collect()
    }
}

pub fn build_linewidth_histogram_from(samples: &[f64], scans: usize, scheme: &BinningScheme) -> Result<LinewidthHistogram> {
    scheme.validate()?;
    let mut counts = vec![0u64; scheme.n_bins()];
    let mut overflow = 0;
    for &x in samples {
        match scheme.bin_of(x) {
            Some(i) => counts[i] += 1,
            None => overflow += 1,
        }
    }
    Ok(LinewidthHistogram {
        scheme: *scheme,
        counts,
        overflow,
        scans: scans.max(samples.len()),
    })
}

pub fn build_linewidth_histogram(set: &LinewidthSampleSet, scheme: &BinningScheme) -> Result<LinewidthHistogram> {
    build_linewidth_histogram_from(set.fwhms(), set.source.scans, scheme)
}

#[cfg(test)]
mod tests;
