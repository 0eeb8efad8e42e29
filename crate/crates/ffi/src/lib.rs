//! C interface to `ple_linewidth`.
//!
//! Every function returns a [`PleStatus`]; results come back through out
//! pointers. Handles are opaque and owned by the caller once returned, and
//! each has its own `_free`. After a non-OK status the message is available
//! from [`ple_last_error`] on the same thread.
//!
//! Panics never cross the boundary; they surface as `PLE_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use num_complex::Complex64;
use ple_linewidth::cli::io;
use ple_linewidth::estimators::{
    build_linewidth_histogram, estimate, BootstrapConfig, EstimatorKind, LinewidthSampleSet,
};
use ple_linewidth::fitting::{fit_batch, AcceptanceRule, BatchFit, FitConfig, FitMode, FitStatus};
use ple_linewidth::lineshape::{faddeeva, voigt_fwhm, FrequencyWindow};
use ple_linewidth::mcm::{
    confidence_region, grid_search, BinningScheme, FixedModel, GridSpec, McmConfig, McmGrid, McmResult,
    DELTA_99_TWO_PARAMS,
};
use ple_linewidth::synth::{synth_batch, Provenance, Scan, ScanModel};
use ple_linewidth::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Too few or unusable samples.
    Data = 5,
    /// A stage of the analysis could not proceed (degenerate model, binning).
    Pipeline = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PleFitMode {
    Free = 0,
    Tied = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PleFitStatus {
    Converged = 0,
    Rejected = 1,
    MaxIterations = 2,
    Degenerate = 3,
    NonFinite = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PleEstimator {
    Median = 0,
    Ivw = 1,
    Lognormal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleFitOptions {
    pub mode: PleFitMode,
    pub min_counts_per_bin: u32,
    pub fit_offset: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleFitRecord {
    pub fwhm_mhz: f64,
    /// NaN when unavailable.
    pub stderr_mhz: f64,
    pub status: PleFitStatus,
    pub usable: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PleBatchSummary {
    pub total: usize,
    pub rejected: usize,
    pub not_converged: usize,
    pub fitted: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleEstimate {
    pub value_mhz: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub k_used: usize,
    pub k_rejected: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleMcmOptions {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub gamma_step: f64,
    pub nbar_lo: f64,
    pub nbar_hi: f64,
    pub nbar_step: f64,
    pub photon_sigma: f64,
    pub noise_mean: f64,
    /// Simulated scans per cell; 0 picks ten times the observed count.
    pub replicas: usize,
    pub delta: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PleMcmSummary {
    pub best_gamma: f64,
    pub best_nbar: f64,
    pub s_min: f64,
    pub gamma_ci_lo: f64,
    pub gamma_ci_hi: f64,
    pub nbar_ci_lo: f64,
    pub nbar_ci_hi: f64,
    pub n_gamma: usize,
    pub n_nbar: usize,
    pub masked: usize,
    pub boundary_hit: bool,
}

/// Binned scans sharing one window.
pub struct PleScanBatch {
    scans: Vec<Scan>,
}

/// Per-scan fits with the settings that produced them.
pub struct PleFits {
    batch: BatchFit,
    config: FitConfig,
}

pub struct PleMcm {
    grid: McmGrid,
    result: McmResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> PleStatus {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Domain(_) | Error::DegenerateShape(_) => {
            PleStatus::InvalidArgument
        }
        Error::Io { .. } | Error::Json(_) => PleStatus::Io,
        Error::Parse { .. } => PleStatus::Parse,
        Error::EmptySamples | Error::NoAcceptedScans | Error::TooFewSamples { .. } | Error::ZeroStdErr { .. } => {
            PleStatus::Data
        }
        _ => PleStatus::Pipeline,
    }
}

struct Fail(PleStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(PleStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PleStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PleStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(PleStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(PleStatus::NullPointer, format!("{name} is null")));
    }
    p.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ple_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full length including the
/// terminator. Pass a null `buf` to query the length.
#[no_mangle]
pub unsafe extern "C" fn ple_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Faddeeva function w(z).
#[no_mangle]
pub unsafe extern "C" fn ple_faddeeva(re: f64, im: f64, out_re: *mut f64, out_im: *mut f64) -> PleStatus {
    guard(|| {
        let w = faddeeva(Complex64::new(re, im))?;
        write_out(out_re, w.re, "out_re")?;
        write_out(out_im, w.im, "out_im")
    })
}

/// Voigt FWHM for Gaussian σ and Lorentzian half width γ.
#[no_mangle]
pub unsafe extern "C" fn ple_voigt_fwhm(sigma: f64, gamma: f64, out: *mut f64) -> PleStatus {
    guard(|| write_out(out, voigt_fwhm(sigma, gamma)?, "out"))
}

/// Simulates `count` scans on the default window.
#[no_mangle]
pub unsafe extern "C" fn ple_scans_synth(
    fwhm_mhz: f64,
    mean_photons: f64,
    photon_sigma: f64,
    noise_mean: f64,
    count: usize,
    seed: u64,
    out: *mut *mut PleScanBatch,
) -> PleStatus {
    guard(|| {
        let model = ScanModel::new(fwhm_mhz, mean_photons, photon_sigma, noise_mean, seed)?;
        let scans = synth_batch(&model, count)?;
        write_out(out, Box::into_raw(Box::new(PleScanBatch { scans })), "out")
    })
}

/// Builds a batch from `n_scans` rows of counts laid out back to back, each
/// `(hi - lo) / bin_width` long.
#[no_mangle]
pub unsafe extern "C" fn ple_scans_from_counts(
    lo_mhz: f64,
    hi_mhz: f64,
    bin_width_mhz: f64,
    counts: *const u32,
    n_scans: usize,
    out: *mut *mut PleScanBatch,
) -> PleStatus {
    guard(|| {
        let window = FrequencyWindow::new(lo_mhz, hi_mhz, bin_width_mhz)?;
        let bins = window.n_bins();
        let total = n_scans.checked_mul(bins).ok_or_else(|| invalid("scan count overflows"))?;
        let data: &[u32] = match total {
            0 => &[],
            _ if counts.is_null() => return Err(Fail(PleStatus::NullPointer, "counts is null".into())),
            _ => std::slice::from_raw_parts(counts, total),
        };
        let scans = data
            .chunks_exact(bins)
            .enumerate()
            .map(|(i, row)| Scan::new(window, row.to_vec(), Provenance::Ingested, i))
            .collect::<Result<Vec<_>, _>>()?;
        write_out(out, Box::into_raw(Box::new(PleScanBatch { scans })), "out")
    })
}

/// Reads a ScanFile CSV; `nominal_resonance_mhz` is subtracted from the
/// window edges.
#[no_mangle]
pub unsafe extern "C" fn ple_scans_read(
    path: *const c_char,
    nominal_resonance_mhz: f64,
    out: *mut *mut PleScanBatch,
) -> PleStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail(PleStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let scans = io::ingest(Path::new(path), nominal_resonance_mhz)?;
        write_out(out, Box::into_raw(Box::new(PleScanBatch { scans })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_scans_len(batch: *const PleScanBatch, out: *mut usize) -> PleStatus {
    guard(|| write_out(out, deref(batch, "batch")?.scans.len(), "out"))
}

/// Copies the counts of scan `index` into `buf`. `bins` receives the row
/// length; a short `buf` yields `PLE_STATUS_BUFFER_TOO_SMALL` with `bins` set.
#[no_mangle]
pub unsafe extern "C" fn ple_scans_counts(
    batch: *const PleScanBatch,
    index: usize,
    buf: *mut u32,
    len: usize,
    bins: *mut usize,
) -> PleStatus {
    guard(|| {
        let batch = deref(batch, "batch")?;
        let scan = batch
            .scans
            .get(index)
            .ok_or_else(|| invalid(format!("scan {index} out of range for {} scans", batch.scans.len())))?;
        write_out(bins, scan.counts.len(), "bins")?;
        if len < scan.counts.len() || buf.is_null() {
            return Err(Fail(
                PleStatus::BufferTooSmall,
                format!("need {} slots, got {len}", scan.counts.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(scan.counts.as_ptr(), buf, scan.counts.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_scans_free(batch: *mut PleScanBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

#[no_mangle]
pub extern "C" fn ple_fit_options_default() -> PleFitOptions {
    let c = FitConfig::default();
    PleFitOptions {
        mode: PleFitMode::Free,
        min_counts_per_bin: c.acceptance.min_counts_per_bin,
        fit_offset: c.fit_offset,
    }
}

fn fit_config(o: &PleFitOptions) -> Result<FitConfig, Fail> {
    Ok(FitConfig {
        mode: match o.mode {
            PleFitMode::Free => FitMode::Free,
            PleFitMode::Tied => FitMode::Tied,
        },
        fit_offset: o.fit_offset,
        acceptance: AcceptanceRule::new(o.min_counts_per_bin)?,
        ..FitConfig::default()
    })
}

/// Fits every scan. `options` may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn ple_fit(
    batch: *const PleScanBatch,
    options: *const PleFitOptions,
    out: *mut *mut PleFits,
) -> PleStatus {
    guard(|| {
        let batch = deref(batch, "batch")?;
        let options = options.as_ref().copied().unwrap_or_else(|| ple_fit_options_default());
        let config = fit_config(&options)?;
        let fitted = fit_batch(&batch.scans, &config.acceptance, &config);
        write_out(out, Box::into_raw(Box::new(PleFits { batch: fitted, config })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_fits_len(fits: *const PleFits, out: *mut usize) -> PleStatus {
    guard(|| write_out(out, deref(fits, "fits")?.batch.results.len(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn ple_fits_get(fits: *const PleFits, index: usize, out: *mut PleFitRecord) -> PleStatus {
    guard(|| {
        let fits = deref(fits, "fits")?;
        let r = fits
            .batch
            .results
            .get(index)
            .ok_or_else(|| invalid(format!("fit {index} out of range for {}", fits.batch.results.len())))?;
        let status = match r.status {
            FitStatus::Converged => PleFitStatus::Converged,
            FitStatus::Rejected => PleFitStatus::Rejected,
            FitStatus::MaxIterations => PleFitStatus::MaxIterations,
            FitStatus::Degenerate => PleFitStatus::Degenerate,
            FitStatus::NonFinite => PleFitStatus::NonFinite,
        };
        let record = PleFitRecord {
            fwhm_mhz: r.fwhm,
            stderr_mhz: r.stderr_fwhm.unwrap_or(f64::NAN),
            status,
            usable: r.usable(),
        };
        write_out(out, record, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_fits_summary(fits: *const PleFits, out: *mut PleBatchSummary) -> PleStatus {
    guard(|| {
        let s = deref(fits, "fits")?.batch.summary;
        let summary = PleBatchSummary {
            total: s.total,
            rejected: s.rejected,
            not_converged: s.not_converged,
            fitted: s.fitted,
        };
        write_out(out, summary, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_fits_free(fits: *mut PleFits) {
    if !fits.is_null() {
        drop(Box::from_raw(fits));
    }
}

/// Linewidth estimate over the usable fits. `resamples` and `level` drive
/// the bootstrap interval (median and lognormal); `level` also sets the IVW
/// normal interval.
#[no_mangle]
pub unsafe extern "C" fn ple_estimate(
    fits: *const PleFits,
    estimator: PleEstimator,
    resamples: usize,
    level: f64,
    seed: u64,
    out: *mut PleEstimate,
) -> PleStatus {
    guard(|| {
        let fits = deref(fits, "fits")?;
        if resamples == 0 || !(level > 0.0 && level < 1.0) {
            return Err(invalid("resamples must be positive and level in (0, 1)"));
        }
        let set = LinewidthSampleSet::from_batch(&fits.batch, None);
        let kind = match estimator {
            PleEstimator::Median => EstimatorKind::Median,
            PleEstimator::Ivw => EstimatorKind::Ivw,
            PleEstimator::Lognormal => EstimatorKind::Lognormal,
        };
        let r = estimate(kind, &set, &BootstrapConfig { resamples, level, seed })?;
        let e = PleEstimate {
            value_mhz: r.value_mhz,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            k_used: r.k_used,
            k_rejected: r.k_rejected,
        };
        write_out(out, e, "out")
    })
}

#[no_mangle]
pub extern "C" fn ple_mcm_options_default() -> PleMcmOptions {
    let m = FixedModel::default();
    PleMcmOptions {
        gamma_lo: 10.0,
        gamma_hi: 40.0,
        gamma_step: 1.0,
        nbar_lo: 10.0,
        nbar_hi: 60.0,
        nbar_step: 2.0,
        photon_sigma: m.photon_sigma,
        noise_mean: m.noise_mean,
        replicas: 0,
        delta: DELTA_99_TWO_PARAMS,
        seed: 0,
    }
}

/// Grid search over (γ, n̄) matching the simulated linewidth histogram to
/// the fits. Simulations use the fit settings the fits were made with.
/// `options` may be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn ple_mcm(fits: *const PleFits, options: *const PleMcmOptions, out: *mut *mut PleMcm) -> PleStatus {
    guard(|| {
        let fits = deref(fits, "fits")?;
        let o = options.as_ref().copied().unwrap_or_else(|| ple_mcm_options_default());
        let grid_spec = GridSpec::from_ranges((o.gamma_lo, o.gamma_hi, o.gamma_step), (o.nbar_lo, o.nbar_hi, o.nbar_step))?;
        let model = FixedModel {
            photon_sigma: o.photon_sigma,
            noise_mean: o.noise_mean,
            acceptance: fits.config.acceptance,
            fit: fits.config,
            ..FixedModel::default()
        };
        let config = McmConfig {
            scheme: BinningScheme::default(),
            replicas: (o.replicas > 0).then_some(o.replicas),
            delta: o.delta,
            seed: o.seed,
        };
        let set = LinewidthSampleSet::from_batch(&fits.batch, None);
        let observed = build_linewidth_histogram(&set, &config.scheme)?;
        let grid = grid_search(&observed, &grid_spec, &model, &config)?;
        let result = confidence_region(&grid, o.delta)?;
        write_out(out, Box::into_raw(Box::new(PleMcm { grid, result })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_mcm_summary(mcm: *const PleMcm, out: *mut PleMcmSummary) -> PleStatus {
    guard(|| {
        let m = deref(mcm, "mcm")?;
        let r = &m.result;
        let summary = PleMcmSummary {
            best_gamma: r.best_gamma,
            best_nbar: r.best_nbar,
            s_min: r.s_min,
            gamma_ci_lo: r.gamma_ci.0,
            gamma_ci_hi: r.gamma_ci.1,
            nbar_ci_lo: r.nbar_ci.0,
            nbar_ci_hi: r.nbar_ci.1,
            n_gamma: m.grid.gammas.len(),
            n_nbar: m.grid.nbars.len(),
            masked: m.grid.masked,
            boundary_hit: r.boundary_hit,
        };
        write_out(out, summary, "out")
    })
}

/// Copies the χ² surface, γ rows by n̄ columns, into `buf`. Masked cells
/// are NaN.
#[no_mangle]
pub unsafe extern "C" fn ple_mcm_surface(mcm: *const PleMcm, buf: *mut f64, len: usize) -> PleStatus {
    guard(|| {
        let m = deref(mcm, "mcm")?;
        let n = m.grid.s.len();
        if len < n || buf.is_null() {
            return Err(Fail(PleStatus::BufferTooSmall, format!("need {n} slots, got {len}")));
        }
        for (i, s) in m.grid.s.iter().enumerate() {
            *buf.add(i) = s.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ple_mcm_free(mcm: *mut PleMcm) {
    if !mcm.is_null() {
        drop(Box::from_raw(mcm));
    }
}
