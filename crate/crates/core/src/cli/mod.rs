//! The `ple-linewidth` command line.
//!
//! Every subcommand writes its data artifacts plus `<command>.manifest.json`
//! into the output directory (`--out-dir`, else `$PLE_LINEWIDTH_OUT_DIR`, else
//! the config file's `output_dir`). Data artifacts depend only on the
//! effective config and seed. In the manifest only `timestamps` and
//! `runtime` (the thread count) vary between identical runs.

pub mod config;
pub mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimators::{self, build_linewidth_histogram, BootstrapConfig, EstimatorKind, LinewidthSampleSet};
use crate::fitting::{fit_batch, FitMode};
use crate::mcm::{confidence_region, grid_search, McmConfig};
use crate::study::{self, ConsistencySpec, McmSweep, StudyEstimator, SweepSpec};
use crate::synth::{synth_batch, ScanModel};
use config::{AxisRange, RunConfig};

pub const OUT_DIR_ENV: &str = "PLE_LINEWIDTH_OUT_DIR";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Malformed command line (clap's own code).
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const PARSE: i32 = 5;
    /// Too little usable data: nothing passed the filter, too few samples.
    pub const DATA: i32 = 6;
    /// Numerical or model failure inside the pipeline.
    pub const PIPELINE: i32 = 7;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => exit::CONFIG,
        Error::Io { .. } | Error::Json(_) => exit::IO,
        Error::Parse { .. } => exit::PARSE,
        Error::EmptySamples | Error::NoAcceptedScans | Error::TooFewSamples { .. } | Error::ZeroStdErr { .. } => {
            exit::DATA
        }
        Error::Domain(_)
        | Error::DegenerateShape(_)
        | Error::DegenerateModel { .. }
        | Error::CannotBin { .. }
        | Error::LengthMismatch { .. }
        | Error::ZeroExpected { .. }
        | Error::TooManyMasked { .. } => exit::PIPELINE,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match exit_code(e) {
        exit::CONFIG => "config",
        exit::IO => "io",
        exit::PARSE => "parse",
        exit::DATA => "data",
        _ => "pipeline",
    }
}

#[derive(Debug, Parser)]
#[command(name = "ple-linewidth", version, about = "Linewidth reconstruction from undersampled PLE scans")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CommonArgs {
    /// Fit mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Fit a constant baseline.
    #[arg(long, global = true)]
    fit_offset: bool,
    /// Minimum counts in the brightest bin for a scan to be analysed.
    #[arg(long, global = true)]
    min_counts: Option<u32>,
    /// Photon-number spread of the simulation model.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Mean background events per scan.
    #[arg(long, global = true)]
    noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Tied,
    Free,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a ScanFile.
    Synth(SynthArgs),
    /// Fit every scan of a ScanFile.
    Fit(InputArgs),
    /// Classical estimate from a ScanFile.
    Estimate(EstimateArgs),
    /// Monte Carlo χ² reconstruction from a ScanFile.
    Mcm(McmArgs),
    /// Estimator-quality sweeps.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Validate a ScanFile and summarize it.
    IngestCheck(InputArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// True Lorentzian FWHM, MHz.
    #[arg(long, default_value_t = 20.0)]
    fwhm: f64,
    #[arg(long, default_value_t = 25.0)]
    nbar: f64,
    #[arg(long, default_value_t = 2000)]
    scans: usize,
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// ScanFile to read.
    #[arg(long)]
    input: PathBuf,
    /// Subtracted from the file's window edges, MHz.
    #[arg(long, default_value_t = 0.0)]
    nominal_resonance: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Median,
    Ivw,
    Lognormal,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Median)]
    method: MethodArg,
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.99)]
    level: f64,
}

#[derive(Debug, Args, Serialize)]
struct McmArgs {
    #[command(flatten)]
    input: InputArgs,
    /// γ axis as lo:hi:step, MHz FWHM.
    #[arg(long)]
    gamma: Option<AxisRange>,
    /// n̄ axis as lo:hi:step.
    #[arg(long)]
    nbar: Option<AxisRange>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Region threshold above S_min.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum StudyCommand {
    /// Bias and spread maps.
    Bias(BiasArgs),
    /// Spread of the median against the number of scans.
    Stability(StabilityArgs),
    /// Consistency thresholds n̄* per linewidth.
    Threshold(ThresholdArgs),
    /// MCM bias, interval width, coverage and scans needed.
    McmQuality(McmQualityArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StudyEstimatorArg {
    Median,
    Ivw,
    Lognormal,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    /// True linewidths, comma separated, MHz FWHM.
    #[arg(long, value_delimiter = ',', default_value = "15,20,25,30")]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "15,25,40,60,80,100")]
    nbars: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    scans: usize,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
}

#[derive(Debug, Args, Serialize)]
struct BiasArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_enum, default_value_t = StudyEstimatorArg::Median)]
    estimator: StudyEstimatorArg,
}

#[derive(Debug, Args, Serialize)]
struct StabilityArgs {
    #[arg(long, default_value_t = 20.0)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', default_value = "20,30,40,60,80,100")]
    nbars: Vec<f64>,
    /// Increasing scan counts.
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,200,250,300,350,400,450,500,600,700,800")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    repetitions: usize,
}

#[derive(Debug, Args, Serialize)]
struct ThresholdArgs {
    #[arg(long, value_delimiter = ',', default_value = "17,29")]
    gammas: Vec<f64>,
    /// Candidate n̄ grid as lo:hi:step.
    #[arg(long, default_value = "20:150:2")]
    nbar: AxisRange,
    #[arg(long, default_value_t = 0.02)]
    precision: f64,
    #[arg(long, default_value_t = 0.99)]
    confidence: f64,
    #[arg(long, default_value_t = 2000)]
    scans: usize,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
}

#[derive(Debug, Args, Serialize)]
struct McmQualityArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Scan counts for the scans-needed map; empty to skip.
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 6.0)]
    gamma_halfwidth: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_step: f64,
    #[arg(long, default_value_t = 12.0)]
    nbar_halfwidth: f64,
    #[arg(long, default_value_t = 2.0)]
    nbar_step: f64,
    #[arg(long)]
    replicas: Option<usize>,
}

/// Folds config file, environment and flags into the effective config.
fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.out_dir {
        c.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    let a = &cli.common;
    if let Some(m) = a.mode {
        c.fit.mode = match m {
            ModeArg::Tied => FitMode::Tied,
            ModeArg::Free => FitMode::Free,
        };
    }
    if a.fit_offset {
        c.fit.fit_offset = true;
    }
    if let Some(m) = a.min_counts {
        c.acceptance.min_counts_per_bin = m;
    }
    if let Some(s) = a.sigma {
        c.photon_sigma = s;
    }
    if let Some(n) = a.noise {
        c.noise_mean = n;
    }
    if let Command::Mcm(m) = &cli.command {
        if let Some(g) = m.gamma {
            c.grid.gamma = g;
        }
        if let Some(n) = m.nbar {
            c.grid.nbar = n;
        }
        if m.replicas.is_some() {
            c.replicas = m.replicas;
        }
        if let Some(d) = m.delta {
            c.delta = d;
        }
    }
    c.validate()?;
    Ok(c)
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn threads() -> usize {
    rayon::current_num_threads()
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            let code = exit_code(&e);
            let report = json!({"error": {"kind": error_kind(&e), "message": e.to_string(), "exit_code": code}});
            eprintln!("{report}");
            code
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // A pool already built (a second run in one process) keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = effective_config(cli)?;
    let started = unix_seconds();
    let (name, args, mut out) = match &cli.command {
        Command::Synth(a) => ("synth", to_value(a)?, cmd_synth(a, &config)?),
        Command::Fit(a) => ("fit", to_value(a)?, cmd_fit(a, &config)?),
        Command::Estimate(a) => ("estimate", to_value(a)?, cmd_estimate(a, &config)?),
        Command::Mcm(a) => ("mcm", to_value(a)?, cmd_mcm(a, &config)?),
        Command::Study(s) => match s {
            StudyCommand::Bias(a) => ("study-bias", to_value(a)?, cmd_study_bias(a, &config)?),
            StudyCommand::Stability(a) => ("study-stability", to_value(a)?, cmd_study_stability(a, &config)?),
            StudyCommand::Threshold(a) => ("study-threshold", to_value(a)?, cmd_study_threshold(a, &config)?),
            StudyCommand::McmQuality(a) => ("study-mcm-quality", to_value(a)?, cmd_study_mcm_quality(a, &config)?),
        },
        Command::IngestCheck(a) => ("ingest-check", to_value(a)?, cmd_ingest_check(a, &config)?),
    };
    let manifest = json!({
        "tool": "ple-linewidth",
        "version": VERSION,
        "command": name,
        "seed": config.seed,
        "config": config,
        "arguments": args,
        "outputs": out.files,
        "timestamps": {
            "started_unix_s": started,
            "finished_unix_s": unix_seconds(),
        },
        "runtime": {"threads": threads()},
    });
    eprintln!(
        "ple-linewidth {name}: seed {} config {}",
        config.seed,
        serde_json::to_string(&config)?
    );
    out.json(&format!("{name}.manifest.json"), &manifest)?;
    Ok(())
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn cmd_synth(a: &SynthArgs, c: &RunConfig) -> Result<Output> {
    let model =
        ScanModel::new(a.fwhm, a.nbar, c.photon_sigma, c.noise_mean, c.seed)?.with_window(c.window)?;
    let scans = synth_batch(&model, a.scans)?;
    let mut out = Output::new(&c.output_dir)?;
    out.write("scans.csv", &io::write_scan_csv(&scans)?)?;
    Ok(out)
}

fn load_scans(a: &InputArgs) -> Result<Vec<crate::synth::Scan>> {
    let scans = io::ingest(&a.input, a.nominal_resonance)?;
    if scans.is_empty() {
        return Err(Error::NoAcceptedScans);
    }
    Ok(scans)
}

fn fitted_set(a: &InputArgs, c: &RunConfig) -> Result<(crate::fitting::BatchFit, LinewidthSampleSet)> {
    let scans = load_scans(a)?;
    let batch = fit_batch(&scans, &c.acceptance, &c.fit_config());
    let set = LinewidthSampleSet::from_batch(&batch, None);
    if set.is_empty() {
        return Err(Error::NoAcceptedScans);
    }
    Ok((batch, set))
}

fn cmd_fit(a: &InputArgs, c: &RunConfig) -> Result<Output> {
    let scans = load_scans(a)?;
    let batch = fit_batch(&scans, &c.acceptance, &c.fit_config());
    let mut out = Output::new(&c.output_dir)?;
    out.write("fits.csv", &io::write_fit_csv(&batch.results))?;
    out.json("fit_summary.json", &batch.summary)?;
    Ok(out)
}

fn cmd_estimate(a: &EstimateArgs, c: &RunConfig) -> Result<Output> {
    let (_, set) = fitted_set(&a.input, c)?;
    let kind = match a.method {
        MethodArg::Median => EstimatorKind::Median,
        MethodArg::Ivw => EstimatorKind::Ivw,
        MethodArg::Lognormal => EstimatorKind::Lognormal,
    };
    let bootstrap = BootstrapConfig {
        resamples: a.resamples,
        level: a.level,
        seed: c.seed,
    };
    let report = estimators::estimate(kind, &set, &bootstrap)?;
    let mut out = Output::new(&c.output_dir)?;
    out.json("estimate.json", &report)?;
    Ok(out)
}

fn cmd_mcm(a: &McmArgs, c: &RunConfig) -> Result<Output> {
    let (_, set) = fitted_set(&a.input, c)?;
    let observed = build_linewidth_histogram(&set, &c.binning)?;
    let mcm = McmConfig {
        scheme: c.binning,
        replicas: c.replicas,
        delta: c.delta,
        seed: c.seed,
    };
    let grid = grid_search(&observed, &c.grid.spec()?, &c.fixed_model(), &mcm)?;
    let result = confidence_region(&grid, c.delta)?;
    let mut out = Output::new(&c.output_dir)?;
    let mut hist = String::from("bin,upper_edge_mhz,count\n");
    for (i, (edge, n)) in c.binning.upper_edges().iter().zip(&observed.counts).enumerate() {
        hist.push_str(&format!("{i},{edge:.3},{n}\n"));
    }
    hist.push_str(&format!("overflow,,{}\n", observed.overflow));
    out.write("observed_histogram.csv", &hist)?;
    out.write("mcm_surface.csv", &grid.to_csv())?;
    out.json("mcm_grid.json", &grid)?;
    out.json("mcm_result.json", &result)?;
    Ok(out)
}

fn sweep_spec(a: &SweepArgs, estimator: StudyEstimator, c: &RunConfig) -> Result<SweepSpec> {
    let spec = SweepSpec {
        gammas: a.gammas.clone(),
        nbars: a.nbars.clone(),
        scans: a.scans,
        repetitions: a.repetitions,
        estimator,
        model: c.fixed_model(),
        mcm: McmSweep {
            config: McmConfig {
                scheme: c.binning,
                replicas: c.replicas,
                delta: c.delta,
                seed: c.seed,
            },
            ..McmSweep::default()
        },
        seed: c.seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn write_report(report: &study::StudyReport, c: &RunConfig) -> Result<Output> {
    let mut out = Output::new(&c.output_dir)?;
    for (stem, csv) in report.matrices() {
        out.write(&format!("{stem}.csv"), &csv)?;
    }
    out.json("report.json", report)?;
    Ok(out)
}

fn cmd_study_bias(a: &BiasArgs, c: &RunConfig) -> Result<Output> {
    let estimator = match a.estimator {
        StudyEstimatorArg::Median => StudyEstimator::Median,
        StudyEstimatorArg::Ivw => StudyEstimator::Ivw,
        StudyEstimatorArg::Lognormal => StudyEstimator::Lognormal,
    };
    write_report(&study::bias_sweep(&sweep_spec(&a.sweep, estimator, c)?)?, c)
}

fn cmd_study_mcm_quality(a: &McmQualityArgs, c: &RunConfig) -> Result<Output> {
    let mut spec = sweep_spec(&a.sweep, StudyEstimator::Mcm, c)?;
    spec.mcm.gamma_halfwidth = a.gamma_halfwidth;
    spec.mcm.gamma_step = a.gamma_step;
    spec.mcm.nbar_halfwidth = a.nbar_halfwidth;
    spec.mcm.nbar_step = a.nbar_step;
    if a.replicas.is_some() {
        spec.mcm.config.replicas = a.replicas;
    }
    let ks = a.ks.clone();
    write_report(&study::mcm_quality_sweep(&spec, &ks)?, c)
}

fn cmd_study_stability(a: &StabilityArgs, c: &RunConfig) -> Result<Output> {
    let curve = study::stability_curve(a.gamma, &a.nbars, &a.ks, a.repetitions, &c.fixed_model(), c.seed)?;
    let mut out = Output::new(&c.output_dir)?;
    out.write("stability_rel_std.csv", &curve.matrix_csv(|p| p.rel_std))?;
    out.write("stability_std.csv", &curve.matrix_csv(|p| p.std))?;
    out.write("stability_mean.csv", &curve.matrix_csv(|p| p.mean))?;
    out.json("stability.json", &curve)?;
    Ok(out)
}

fn cmd_study_threshold(a: &ThresholdArgs, c: &RunConfig) -> Result<Output> {
    let nbars = crate::mcm::axis_values((a.nbar.lo, a.nbar.hi, a.nbar.step))?;
    let spec = ConsistencySpec {
        precision: a.precision,
        confidence: a.confidence,
        scans: a.scans,
        repetitions: a.repetitions,
    };
    let thresholds = study::consistency_thresholds(&a.gammas, &nbars, &spec, &c.fixed_model(), c.seed)?;
    let mut csv = String::from("gamma_mhz,nbar_star,resolved,step\n");
    for t in &thresholds {
        csv.push_str(&format!("{},{},{},{}\n", t.gamma, t.nbar_star, t.resolved, t.step));
    }
    let mut out = Output::new(&c.output_dir)?;
    out.write("thresholds.csv", &csv)?;
    out.json("thresholds.json", &thresholds)?;
    Ok(out)
}

fn cmd_ingest_check(a: &InputArgs, c: &RunConfig) -> Result<Output> {
    let scans = io::ingest(&a.input, a.nominal_resonance)?;
    let totals: Vec<f64> = scans.iter().map(|s| s.total() as f64).collect();
    let accepted = scans
        .iter()
        .filter(|s| crate::fitting::accept_scan(s, &c.acceptance))
        .count();
    let (mean, std) = if totals.is_empty() {
        (0.0, 0.0)
    } else {
        study::mean_std(&totals)
    };
    let summary = json!({
        "path": a.input,
        "scans": scans.len(),
        "window": scans.first().map(|s| s.window),
        "bins": scans.first().map_or(0, |s| s.counts.len()),
        "passing_filter": accepted,
        "mean_total_counts": mean,
        "std_total_counts": std,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let mut out = Output::new(&c.output_dir)?;
    out.json("ingest_check.json", &summary)?;
    Ok(out)
}
