//! Reproducible command-line runs: fit, pack, simulate, calibrate, serve and
//! fixture generation.
//!
//! Exit codes: 0 success, 1 non-convergence (outputs are still written),
//! 2 input or runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gearcalib::calibration::{apply_calibration, build_pack, sha256_hex, CalibrationPack, PackInputs};
use gearcalib::dataset::{compute_camera_ratio, load_trips, trips_to_csv};
use gearcalib::inference::{diagnose, impute_missing_y, init_thread_pool, DiagnosticsReport};
use gearcalib::simulation::fixture::{generate_fixture, fixture_truth, study_design, FIXTURE_SEED};
use gearcalib::simulation::{assign_sim_parameters, run_capture_study, CaptureOptions};
use gearcalib::{Camera, ModelConfig, ModelGraph, PosteriorDraws, SamplerConfig, SpeciesMaxNTable, TripRecord};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gearcalib::Error),
    #[error(transparent)]
    Service(#[from] gearcalib_service::ServiceError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gearcalib", version, about = "Cross-gear calibration of camera MaxN against acoustic abundance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a trip table and write draws and diagnostics.
    Fit(FitArgs),
    /// Build a calibration pack from posterior draws.
    Pack(PackArgs),
    /// Simulation study of interval capture rates.
    Simulate(SimulateArgs),
    /// Convert one MaxN count with a calibration pack.
    Calibrate(CalibrateArgs),
    /// Serve a calibration pack over HTTP.
    Serve(ServeArgs),
    /// Write the synthetic 21-trip fixture tables.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub trips: PathBuf,
    /// Per-species MaxN table; with --registry, fills blank ratios and
    /// enables camera-specific ratios.
    #[arg(long, requires = "registry")]
    pub species: Option<PathBuf>,
    #[arg(long, requires = "species")]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `key = value` model configuration; the final model when omitted.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// `key = value` sampler configuration.
    #[arg(long)]
    pub sampler_config: Option<PathBuf>,
    /// Overrides the sampler configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model configuration the draws came from, recorded in the pack.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Pack file to write; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Final-model draws used to assign generating values.
    #[arg(long)]
    pub draws: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub n_datasets: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sampler configuration for every refit; see `capture_sampler_config`.
    #[arg(long)]
    pub sampler_config: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub replication: usize,
    #[arg(long, default_value_t = 0.27)]
    pub jitter_sd: f64,
    #[arg(long, default_value_t = 0.90)]
    pub nominal: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub camera: String,
    #[arg(long, allow_negative_numbers = true)]
    pub maxn: i64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Browser origin allowed to call the service; repeatable.
    #[arg(long = "cors")]
    pub cors: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = FIXTURE_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: inputs, configuration, seed, outputs and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub model_config_path: Option<String>,
    pub sampler_config_path: Option<String>,
    pub model_config: Option<String>,
    pub sampler_config: Option<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub elapsed_seconds: f64,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            seed: None,
            model_config_path: None,
            sampler_config_path: None,
            model_config: None,
            sampler_config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(hash_file(path)?);
        Ok(())
    }

    fn finish(mut self, started: Instant, path: &Path) -> CliResult<()> {
        self.elapsed_seconds = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self).map_err(gearcalib::Error::from)?;
        write_file(path, text.as_bytes())
    }
}

fn hash_file(path: &Path) -> CliResult<FileHash> {
    let bytes = read_file(path)?;
    Ok(FileHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value).map_err(gearcalib::Error::from)?)
}

/// Trips and, when given, the species table; both are recorded as inputs.
fn load_data(data: &DataArgs, manifest: &mut RunManifest) -> CliResult<(Vec<TripRecord>, Option<SpeciesMaxNTable>)> {
    let species = match (&data.species, &data.registry) {
        (Some(s), Some(r)) => {
            manifest.input(s)?;
            manifest.input(r)?;
            Some(SpeciesMaxNTable::load(s, r)?)
        }
        (None, None) => None,
        _ => return Err(CliError::Usage("--species and --registry go together".into())),
    };
    manifest.input(&data.trips)?;
    let trips = load_trips(&data.trips, species.as_ref())?;
    Ok((trips, species))
}

fn load_model_config(path: Option<&Path>, manifest: &mut RunManifest) -> CliResult<ModelConfig> {
    let config = match path {
        Some(p) => {
            manifest.input(p)?;
            manifest.model_config_path = Some(p.display().to_string());
            read_text(p)?.parse()?
        }
        None => ModelConfig::final_model(),
    };
    manifest.model_config = Some(config.to_kv());
    Ok(config)
}

fn load_sampler_config(path: Option<&Path>, default: SamplerConfig, manifest: &mut RunManifest) -> CliResult<SamplerConfig> {
    match path {
        Some(p) => {
            manifest.input(p)?;
            manifest.sampler_config_path = Some(p.display().to_string());
            Ok(read_text(p)?.parse()?)
        }
        None => Ok(default),
    }
}

/// Sampler settings used for capture-study refits unless overridden: shorter
/// chains than a production fit, with the ESS gate relaxed to 100.
pub fn capture_sampler_config(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 4, n_iterations: 30_000, burn_in: 12_000, thin: 9, seed, ess_min: 100.0, ..Default::default() }
}

/// Outcome of `fit`.
#[derive(Debug)]
pub struct FitOutcome {
    pub draws: PosteriorDraws,
    pub diagnostics: DiagnosticsReport,
}

/// Population-parameter draws in wide form, one row per stored draw.
fn trace_csv(graph: &ModelGraph, draws: &PosteriorDraws) -> CliResult<String> {
    let names: Vec<&str> = graph.params().iter().map(|p| p.name.as_str()).collect();
    let cols: Vec<Vec<f64>> = names.iter().map(|n| draws.column(n)).collect::<Result<_, _>>()?;
    let mut s = String::from("chain,iteration");
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    let mut within = vec![0usize; draws.n_chains()];
    for m in 0..draws.n_draws() {
        let c = draws.chain_ids()[m];
        within[c] += 1;
        let _ = write!(s, "{c},{}", within[c]);
        for col in &cols {
            let _ = write!(s, ",{:?}", col[m]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<FitOutcome> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("fit");
    let (trips, _) = load_data(&args.data, &mut manifest)?;
    let model = load_model_config(args.model_config.as_deref(), &mut manifest)?;
    let mut sampler = load_sampler_config(args.sampler_config.as_deref(), SamplerConfig::default(), &mut manifest)?;
    if let Some(seed) = args.seed {
        sampler.seed = seed;
    }
    sampler.validate()?;
    manifest.seed = Some(sampler.seed);
    manifest.sampler_config = Some(sampler.to_kv());

    let graph = ModelGraph::build(&model, &trips)?;
    let draws = gearcalib::run_mcmc(&graph, &sampler)?;
    let diagnostics = diagnose(&graph, &draws, &sampler)?;
    let imputed = impute_missing_y(&graph, &draws, sampler.seed)?;

    create_dir(&args.out)?;
    let draws_path = args.out.join("draws.csv");
    draws.save_csv(&draws_path)?;
    manifest.output(&draws_path)?;
    let diag_path = args.out.join("diagnostics.json");
    write_file(&diag_path, to_json(&diagnostics)?.as_bytes())?;
    manifest.output(&diag_path)?;
    let trace_path = args.out.join("trace.csv");
    write_file(&trace_path, trace_csv(&graph, &draws)?.as_bytes())?;
    manifest.output(&trace_path)?;
    let mut imp = String::from("trip_id,camera,median,lo80,hi80\n");
    for cell in &imputed {
        let _ = writeln!(imp, "{},{},{:?},{:?},{:?}", cell.trip_id, cell.camera, cell.median, cell.lo80, cell.hi80);
    }
    let imp_path = args.out.join("imputed.csv");
    write_file(&imp_path, imp.as_bytes())?;
    manifest.output(&imp_path)?;
    manifest.finish(started, &args.out.join("manifest.json"))?;
    Ok(FitOutcome { draws, diagnostics })
}

pub fn cmd_pack(args: &PackArgs) -> CliResult<CalibrationPack> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("pack");
    manifest.seed = Some(args.seed);
    manifest.input(&args.draws)?;
    let draws = PosteriorDraws::load_csv(&args.draws)?;
    let (trips, species) = load_data(&args.data, &mut manifest)?;
    let model = load_model_config(args.model_config.as_deref(), &mut manifest)?;
    let camera_ratios = match &species {
        Some(table) => Some(
            trips
                .iter()
                .map(|t| {
                    let mut row = [None; 4];
                    for c in Camera::ALL {
                        if t.maxn_of(c).is_some() {
                            row[c.index()] = compute_camera_ratio(table, &t.trip_id, c)?;
                        }
                    }
                    Ok(row)
                })
                .collect::<gearcalib::Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let pack = build_pack(&PackInputs {
        draws: &draws,
        trips: &trips,
        model_config: &model,
        seed: args.seed,
        camera_ratios: camera_ratios.as_deref(),
    })?;
    pack.validate()?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    pack.save(&args.out)?;
    manifest.output(&args.out)?;
    manifest.finish(started, &args.out.with_extension("manifest.json"))?;
    Ok(pack)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<gearcalib::CaptureReport> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(args.seed);
    manifest.input(&args.draws)?;
    let draws = PosteriorDraws::load_csv(&args.draws)?;
    let (trips, _) = load_data(&args.data, &mut manifest)?;
    let mut sampler = load_sampler_config(args.sampler_config.as_deref(), capture_sampler_config(args.seed), &mut manifest)?;
    sampler.seed = args.seed;
    manifest.sampler_config = Some(sampler.to_kv());
    manifest.model_config = Some(ModelConfig::comprehensive().to_kv());

    let truth = assign_sim_parameters(&draws, &trips)?;
    let options =
        CaptureOptions { n_datasets: args.n_datasets, nominal: args.nominal, replication: args.replication, jitter_sd: args.jitter_sd };
    let report = run_capture_study(&truth, &trips, &options, &sampler)?;

    create_dir(&args.out)?;
    let truth_path = args.out.join("true_params.json");
    write_file(&truth_path, to_json(&truth)?.as_bytes())?;
    manifest.output(&truth_path)?;
    let table_path = args.out.join("capture_table.txt");
    write_file(&table_path, report.render_table().as_bytes())?;
    manifest.output(&table_path)?;
    let json_path = args.out.join("capture.json");
    write_file(&json_path, report.to_json()?.as_bytes())?;
    manifest.output(&json_path)?;
    manifest.finish(started, &args.out.join("manifest.json"))?;
    Ok(report)
}

pub fn cmd_fixture(args: &FixtureArgs) -> CliResult<()> {
    let fx = generate_fixture(&fixture_truth(), &study_design(), args.seed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("trips.csv"), trips_to_csv(&fx.trips)?.as_bytes())?;
    write_file(&args.out.join("species_maxn.csv"), fx.species.species_csv()?.as_bytes())?;
    write_file(&args.out.join("species_registry.csv"), fx.species.registry_csv()?.as_bytes())?;
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<String> {
    let pack = CalibrationPack::load(&args.pack)?;
    let camera: Camera = args.camera.parse()?;
    let est = apply_calibration(&pack, camera, args.maxn)?;
    Ok(to_json(&est)?)
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let config = gearcalib_service::ServiceConfig {
        pack_path: args.pack.clone(),
        bind: args.bind.clone(),
        port: args.port,
        cors_allowlist: args.cors.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::File { path: args.pack.clone(), source })?;
    runtime.block_on(gearcalib_service::serve(config))?;
    Ok(())
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    init_thread_pool();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|out| {
            let d = &out.diagnostics;
            eprintln!("{} draws from {} chains written to {}", d.n_draws, d.n_chains, a.out.display());
            if d.converged {
                EXIT_OK
            } else {
                eprintln!("not converged:");
                for f in &d.failures {
                    eprintln!("  {f}");
                }
                EXIT_NOT_CONVERGED
            }
        }),
        Command::Pack(a) => cmd_pack(a).map(|pack| {
            for w in &pack.warnings {
                eprintln!("warning: {w}");
            }
            if let Ok(trap) = pack.camera(Camera::Trap) {
                println!("phi-on-y_T posterior-median R^2: {:.3}", trap.median_r2);
            }
            EXIT_OK
        }),
        Command::Simulate(a) => cmd_simulate(a).map(|report| {
            print!("{}", report.render_table());
            EXIT_OK
        }),
        Command::Calibrate(a) => cmd_calibrate(a).map(|json| {
            println!("{json}");
            EXIT_OK
        }),
        Command::Serve(a) => cmd_serve(a).map(|_| EXIT_OK),
        Command::Fixture(a) => cmd_fixture(a).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
