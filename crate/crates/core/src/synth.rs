//! Synthetic PLE scans.
//!
//! A scan draws its signal photon number from a normal law (clamped at zero
//! and rounded), places each photon at a window-truncated Cauchy frequency,
//! and adds a Poisson number of background events spread uniformly over the
//! window.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lineshape::{FrequencyWindow, TruncatedCauchy};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

/// One binned PLE sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub window: FrequencyWindow,
    pub counts: Vec<u32>,
    pub provenance: Provenance,
    pub index: usize,
}

impl Scan {
    pub fn new(window: FrequencyWindow, counts: Vec<u32>, provenance: Provenance, index: usize) -> Result<Self> {
        window.validate()?;
        if counts.len() != window.n_bins() {
            return Err(Error::InvalidParameter(format!(
                "scan has {} bins, window implies {}",
                counts.len(),
                window.n_bins()
            )));
        }
        Ok(Self {
            window,
            counts,
            provenance,
            index,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Generative model for synthetic scans. `true_fwhm` is the Lorentzian FWHM;
/// the Cauchy sampler uses half of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanModel {
    pub true_fwhm: f64,
    pub mean_photons: f64,
    pub photon_sigma: f64,
    pub noise_mean: f64,
    pub window: FrequencyWindow,
    pub seed: u64,
}

impl ScanModel {
    pub fn new(true_fwhm: f64, mean_photons: f64, photon_sigma: f64, noise_mean: f64, seed: u64) -> Result<Self> {
        let m = Self {
            true_fwhm,
            mean_photons,
            photon_sigma,
            noise_mean,
            window: FrequencyWindow::default(),
            seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_window(mut self, window: FrequencyWindow) -> Result<Self> {
        self.window = window;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if !(self.true_fwhm > 0.0 && self.true_fwhm.is_finite()) {
            return Err(Error::InvalidParameter(format!("true FWHM must be positive, got {}", self.true_fwhm)));
        }
        for (name, v) in [
            ("mean photon number", self.mean_photons),
            ("photon number σ", self.photon_sigma),
            ("noise mean", self.noise_mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn cauchy_gamma(&self) -> f64 {
        0.5 * self.true_fwhm
    }
}

/// Normal photon-number draw, clamped at zero and rounded to an integer.
pub fn draw_photon_count<R: Rng + ?Sized>(mean: f64, sigma: f64, rng: &mut R) -> u64 {
    if sigma == 0.0 {
        return mean.max(0.0).round() as u64;
    }
    let normal = Normal::new(mean, sigma).expect("σ is finite and non-negative");
    normal.sample(rng).max(0.0).round() as u64
}

/// Signal and noise event numbers behind one synthetic scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDraws {
    pub signal: u64,
    pub noise: u64,
}

/// Precomputed samplers for one model. Scan `i` is drawn from the stream
/// derived from `(model.seed, i)`.
pub struct ScanGenerator {
    model: ScanModel,
    cauchy: TruncatedCauchy,
    normal: Option<Normal<f64>>,
    poisson: Option<Poisson<f64>>,
}

impl ScanGenerator {
    pub fn new(model: &ScanModel) -> Result<Self> {
        model.validate()?;
        let normal = (model.photon_sigma > 0.0)
            .then(|| Normal::new(model.mean_photons, model.photon_sigma).expect("validated"));
        let poisson = (model.noise_mean > 0.0).then(|| Poisson::new(model.noise_mean).expect("validated"));
        Ok(Self {
            model: *model,
            cauchy: TruncatedCauchy::new(model.cauchy_gamma(), &model.window)?,
            normal,
            poisson,
        })
    }

    pub fn model(&self) -> &ScanModel {
        &self.model
    }

    pub fn scan(&self, index: usize) -> Scan {
        self.draw(index, &mut rng::stream(self.model.seed, index as u64)).0
    }

    fn draw<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> (Scan, ScanDraws) {
        let window = self.model.window;
        let mut counts = vec![0u32; window.n_bins()];
        let signal = match &self.normal {
            Some(n) => n.sample(rng).max(0.0).round() as u64,
            None => self.model.mean_photons.round() as u64,
        };
        for _ in 0..signal {
            let u: f64 = rng.random();
            counts[window.bin_index(self.cauchy.quantile_unchecked(u))] += 1;
        }
        let noise = match &self.poisson {
            Some(p) => p.sample(rng) as u64,
            None => 0,
        };
        for _ in 0..noise {
            let u: f64 = rng.random();
            counts[window.bin_index(window.lo + u * window.span())] += 1;
        }
        let scan = Scan {
            window,
            counts,
            provenance: Provenance::Synthetic,
            index,
        };
        (scan, ScanDraws { signal, noise })
    }
}

pub fn synth_scan<R: Rng + ?Sized>(model: &ScanModel, rng: &mut R) -> Result<Scan> {
    Ok(ScanGenerator::new(model)?.draw(0, rng).0)
}

/// Like [`synth_scan`], also returning the signal and noise draws.
pub fn synth_scan_instrumented<R: Rng + ?Sized>(model: &ScanModel, rng: &mut R) -> Result<(Scan, ScanDraws)> {
    Ok(ScanGenerator::new(model)?.draw(0, rng))
}

/// `k` scans, scan `i` drawn from the stream derived from `(model.seed, i)`.
pub fn synth_batch(model: &ScanModel, k: usize) -> Result<Vec<Scan>> {
    if k == 0 {
        return Err(Error::InvalidParameter("scan count must be at least 1".into()));
    }
    let generator = ScanGenerator::new(model)?;
    Ok((0..k).into_par_iter().map(|i| generator.scan(i)).collect())
}
