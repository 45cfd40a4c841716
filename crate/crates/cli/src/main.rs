use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use num_complex::Complex64 as C64;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nmq_core::error::Error;
use nmq_core::experiments::cavity::{run_cavity_study, CavityConfig};
use nmq_core::experiments::dot::{dot_noise_spectrum, run_ancilla_variants, run_dot_experiment, DotConfig, DotResult, Units};
use nmq_core::experiments::qubit::{run_qubit_study, QubitConfig};
use nmq_core::experiments::Table;
use nmq_core::operator::CMatrix;
use nmq_core::spectral::{psd_relative_error, synthesize, PsdSpec, RationalPsd};

const VERSION: &str = env!("CARGO_PKG_VERSION");

static STARTED: OnceLock<Instant> = OnceLock::new();

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid configuration or PSD input
  3  spectral factorization or synthesis failure
  4  runtime failure (integration, steady state, I/O)
  5  Lorentzian fits failed on more than 10% of the detuning grid";

#[derive(Parser)]
#[command(name = "nmq", version, about = "Augmented Markovian models and whitening quantum filters", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "NMQ_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a physically realizable ancilla from a PSD file.
    Factorize {
        /// PSD JSON: {"num": [[re, im], ...], "den": [[re, im], ...], "domain": "s" | "omega"}.
        psd: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Two coupled cavities: Kalman-filter ensemble and output spectra.
    Cavity(StudyArgs),
    /// Qubit with a Lorentzian ancilla: augmented master equation and SME ensemble.
    Qubit(StudyArgs),
    /// Dot/resonator transmission sweep with Lorentzian fits.
    Dot(StudyArgs),
    /// Two-ancilla noise spectrum of the dot model.
    NoiseSpectrum {
        #[command(flatten)]
        study: StudyArgs,
        /// Detuning at which the ancilla couplings are evaluated (config units).
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
    },
    /// Single-ancilla and combined variants of the dot model against the Markovian one.
    Variants(StudyArgs),
}

#[derive(Args, Clone)]
struct StudyArgs {
    /// JSON config; published parameters when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Synthesis(String),
    Runtime(String),
    Fits(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Synthesis(_) => 3,
            Failure::Runtime(_) => 4,
            Failure::Fits(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Synthesis(m) | Failure::Runtime(m) | Failure::Fits(m) => m,
        }
    }
}

/// Errors from a study driver: parameter problems are configuration errors.
fn study_error(e: Error) -> Failure {
    match e {
        Error::InvalidParameter(_) | Error::InvalidDimension(_) | Error::DimensionMismatch { .. } => {
            Failure::Config(e.to_string())
        }
        _ => Failure::Runtime(e.to_string()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads a config file, or falls back to the published parameters.
fn load_config<T: DeserializeOwned + Serialize>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Collects output files and writes them with a manifest.
struct Run {
    command: &'static str,
    out: PathBuf,
    config: Value,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    files: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn new(command: &'static str, out: &Path, config: &impl Serialize, config_path: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            command,
            out: out.to_path_buf(),
            config: serde_json::to_value(config).expect("configs serialize"),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            files: Vec::new(),
        }
    }

    fn config_hash(&self) -> String {
        sha256_hex(self.config.to_string().as_bytes())
    }

    fn csv(&mut self, name: &str, mut table: Table) {
        let mut meta = vec![
            ("command".to_string(), self.command.to_string()),
            ("nmq".to_string(), format!("{VERSION} config_sha256={}", self.config_hash())),
        ];
        if let Some(seed) = self.seed {
            meta.push(("seed".to_string(), seed.to_string()));
        }
        meta.append(&mut table.metadata);
        table.metadata = meta;
        self.files.push((format!("{name}.csv"), table.to_csv().into_bytes()));
    }

    fn json(&mut self, name: &str, value: &Value) {
        let mut text = serde_json::to_string_pretty(value).expect("json serializes");
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn finish(self) -> Result<(), Failure> {
        fs::create_dir_all(&self.out).map_err(|e| io_error(&self.out, e))?;
        let mut outputs = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.out.join(name);
            fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
            outputs.push(json!({ "file": name, "sha256": sha256_hex(bytes) }));
            info!("wrote {}", path.display());
        }
        let manifest = json!({
            "command": self.command,
            "version": VERSION,
            "config_path": self.config_path.as_ref().map(|p| p.display().to_string()),
            "config_sha256": self.config_hash(),
            "config": self.config,
            "seed": self.seed,
            "wall_time_s": STARTED.get_or_init(Instant::now).elapsed().as_secs_f64(),
            "outputs": outputs,
        });
        let path = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("json serializes") + "\n";
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}

fn complex_matrix(m: &CMatrix) -> Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    json!(rows)
}

fn factorize(psd_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(psd_path).map_err(|e| Failure::Config(format!("{}: {e}", psd_path.display())))?;
    let spec: PsdSpec = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", psd_path.display())))?;
    let psd = RationalPsd::from_spec(&spec).map_err(|e| {
        if e.is_psd_validation() {
            Failure::Config(e.to_string())
        } else {
            Failure::Synthesis(e.to_string())
        }
    })?;
    let pr = synthesize(&psd).map_err(|e| Failure::Synthesis(e.to_string()))?;
    let grid = psd.validation_grid();
    let err = psd_relative_error(&pr.realization, &psd, &grid);
    let mut run = Run::new("factorize", out, &spec, Some(psd_path), None);
    let r = &pr.realization;
    run.json(
        "realization.json",
        &json!({
            "F": complex_matrix(&r.f),
            "G": complex_matrix(&r.g),
            "H": complex_matrix(&r.h),
            "Omega": complex_matrix(&pr.omega),
            "Na": complex_matrix(&pr.na),
            "realizability_residual": pr.residual,
            "psd_grid_check": {
                "points": grid.len(),
                "omega_min": grid.first(),
                "omega_max": grid.last(),
                "max_relative_error": err,
            },
        }),
    );
    let f00: C64 = r.f[(0, 0)];
    info!("order {} realization, F[0,0] = {f00}, residual {:.2e}, PSD error {err:.2e}", r.order(), pr.residual);
    run.finish()
}

fn cavity(args: &StudyArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref(), CavityConfig::published)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(n) = args.n_traj {
        cfg.n_traj = n;
    }
    let r = run_cavity_study(&cfg).map_err(study_error)?;
    let mut run = Run::new("cavity", &args.out, &cfg, args.config.as_deref(), Some(cfg.seed));
    run.csv("cavity_means", r.means_table());
    run.csv("cavity_spectrum_kappa", r.kappa_sweep.table());
    run.csv("cavity_spectrum_delta", r.delta_sweep.table());
    run.csv("cavity_spectrum_gamma0", r.gamma0_sweep.table());
    info!("q_p band fraction {:.3}", r.band_fraction(0));
    run.finish()
}

fn qubit(args: &StudyArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref(), QubitConfig::published)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(n) = args.n_traj {
        cfg.n_traj = n;
    }
    let r = run_qubit_study(&cfg).map_err(study_error)?;
    let mut run = Run::new("qubit", &args.out, &cfg, args.config.as_deref(), Some(cfg.seed));
    for (name, table) in r.tables() {
        run.csv(name, table);
    }
    let b = r.band_fraction();
    info!("band fractions sx {:.3} sy {:.3} sz {:.3}", b[0], b[1], b[2]);
    run.finish()
}

fn reject_stochastic_flags(args: &StudyArgs, command: &str) -> Result<(), Failure> {
    if args.seed.is_some() || args.dt.is_some() || args.horizon.is_some() || args.n_traj.is_some() {
        return Err(Failure::Config(format!(
            "{command} is a deterministic steady-state sweep; --seed, --dt, --horizon and --n-traj do not apply"
        )));
    }
    Ok(())
}

fn check_fits(result: &DotResult) -> Result<(), Failure> {
    let failed = result.failed_fits();
    let n = result.rows.len();
    if failed * 10 > n {
        return Err(Failure::Fits(format!(
            "{} model: Lorentzian fit failed at {failed} of {n} detunings",
            result.model.name()
        )));
    }
    if failed > 0 {
        warn!("{} model: {failed} of {n} fits failed", result.model.name());
    }
    Ok(())
}

fn dot(args: &StudyArgs) -> Result<(), Failure> {
    reject_stochastic_flags(args, "dot")?;
    let cfg = load_config(args.config.as_deref(), DotConfig::published)?;
    let r = run_dot_experiment(&cfg).map_err(study_error)?;
    let mut run = Run::new("dot", &args.out, &cfg, args.config.as_deref(), None);
    run.csv(&format!("dot_{}", r.model.name()), r.table());
    run.finish()?;
    check_fits(&r)
}

fn noise_spectrum(args: &StudyArgs, delta: f64) -> Result<(), Failure> {
    reject_stochastic_flags(args, "noise-spectrum")?;
    let cfg = load_config(args.config.as_deref(), DotConfig::published)?;
    let scale = match cfg.units {
        Units::Ghz => std::f64::consts::TAU,
        Units::Angular => 1.0,
    };
    let s = dot_noise_spectrum(&cfg, delta * scale).map_err(study_error)?;
    let mut run = Run::new("noise-spectrum", &args.out, &cfg, args.config.as_deref(), None);
    let mut table = s.table();
    table.meta("delta", delta);
    run.csv("noise_spectrum", table);
    info!("local maxima at {:?} GHz", s.local_maxima().iter().map(|w| w / std::f64::consts::TAU).collect::<Vec<_>>());
    run.finish()
}

fn variants(args: &StudyArgs) -> Result<(), Failure> {
    reject_stochastic_flags(args, "variants")?;
    let cfg = load_config(args.config.as_deref(), DotConfig::published)?;
    let r = run_ancilla_variants(&cfg).map_err(study_error)?;
    let mut run = Run::new("variants", &args.out, &cfg, args.config.as_deref(), None);
    run.csv("variants_markovian", r.markovian.table());
    for (g, res) in &r.resonant {
        run.csv(&format!("variants_resonant_gamma1_{:.0}mhz", g / std::f64::consts::TAU * 1e3), res.table());
    }
    for (g, res) in &r.offres {
        run.csv(&format!("variants_offres_gamma2_{:.0}ghz", g / std::f64::consts::TAU), res.table());
    }
    run.csv("variants_combined", r.combined.table());
    run.finish()?;
    for res in std::iter::once(&r.markovian)
        .chain(r.resonant.iter().map(|(_, x)| x))
        .chain(r.offres.iter().map(|(_, x)| x))
        .chain(std::iter::once(&r.combined))
    {
        check_fits(res)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Factorize { psd, out } => factorize(psd, out),
        Command::Cavity(a) => cavity(a),
        Command::Qubit(a) => qubit(a),
        Command::Dot(a) => dot(a),
        Command::NoiseSpectrum { study, delta } => noise_spectrum(study, *delta),
        Command::Variants(a) => variants(a),
    }
}

fn main() -> ExitCode {
    STARTED.get_or_init(Instant::now);
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
