//! Run configuration: a JSON file, any subset of whose fields may be given,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{AcceptanceRule, FitConfig};
use crate::lineshape::FrequencyWindow;
use crate::mcm::{BinningScheme, FixedModel, GridSpec, DELTA_99_TWO_PARAMS};

/// Inclusive `lo:hi:step` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl std::str::FromStr for AxisRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [lo, hi, step] => Ok(Self { lo, hi, step }),
            _ => Err(format!("expected lo:hi:step, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRanges {
    pub gamma: AxisRange,
    pub nbar: AxisRange,
}

impl Default for GridRanges {
    fn default() -> Self {
        Self {
            gamma: AxisRange {
                lo: 10.0,
                hi: 40.0,
                step: 1.0,
            },
            nbar: AxisRange {
                lo: 10.0,
                hi: 60.0,
                step: 2.0,
            },
        }
    }
}

impl GridRanges {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::from_ranges(
            (self.gamma.lo, self.gamma.hi, self.gamma.step),
            (self.nbar.lo, self.nbar.hi, self.nbar.step),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: FrequencyWindow,
    pub acceptance: AcceptanceRule,
    pub fit: FitConfig,
    pub binning: BinningScheme,
    pub grid: GridRanges,
    /// Photon-number spread held fixed in simulations.
    pub photon_sigma: f64,
    /// Mean background events per scan held fixed in simulations.
    pub noise_mean: f64,
    /// Replicas per MCM cell; ten times the observed scan count when absent.
    pub replicas: Option<usize>,
    pub delta: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: FrequencyWindow::default(),
            acceptance: AcceptanceRule::default(),
            fit: FitConfig::default(),
            binning: BinningScheme::default(),
            grid: GridRanges::default(),
            photon_sigma: 6.0,
            noise_mean: 2.0,
            replicas: None,
            delta: DELTA_99_TWO_PARAMS,
            seed: 0,
            output_dir: PathBuf::from("ple-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.window.validate().map_err(cfg)?;
        self.binning.validate().map_err(cfg)?;
        AcceptanceRule::new(self.acceptance.min_counts_per_bin).map_err(cfg)?;
        self.grid.spec().map_err(cfg)?;
        for (name, v) in [("photon_sigma", self.photon_sigma), ("noise_mean", self.noise_mean)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be non-negative, got {}", self.delta)));
        }
        if self.replicas == Some(0) {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if self.fit.max_iterations == 0 {
            return Err(Error::Config("fit.max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// The fit settings with the acceptance rule applied.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            acceptance: self.acceptance,
            ..self.fit
        }
    }

    pub fn fixed_model(&self) -> FixedModel {
        FixedModel {
            photon_sigma: self.photon_sigma,
            noise_mean: self.noise_mean,
            window: self.window,
            acceptance: self.acceptance,
            fit: self.fit_config(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_stable() {
        let c = RunConfig {
            seed: 99,
            replicas: Some(500),
            ..Default::default()
        };
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 5, "photon_sigma": 4.0}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.photon_sigma, 4.0);
        assert_eq!(c.window, FrequencyWindow::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 5}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.noise_mean = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.grid.gamma.step = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn axis_parsing() {
        let a: AxisRange = "10:40:1".parse().unwrap();
        assert_eq!((a.lo, a.hi, a.step), (10.0, 40.0, 1.0));
        assert!("10:40".parse::<AxisRange>().is_err());
        assert!("a:b:c".parse::<AxisRange>().is_err());
    }
}
