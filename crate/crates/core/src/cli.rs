//! Batch command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::conjugate::{
    fit_conjugate, grid_search_cv, sample_conjugate_posterior, ConjugateError, ConjugateFixed, ConjugateModel,
    CvConfig, ScoreRule,
};
use crate::data::{OrderedData, SpatialDataset};
use crate::diagnostics::{
    self, coverage_width, crps_gaussian, crps_t, empirical_semivariogram, fit_exponential_variogram, rmspe,
    DiagnosticsError, DiagnosticsReport, PredictiveScores,
};
use crate::geo::{build_neighbor_graph, order_locations, GraphError, NeighborGraph};
use crate::io::{self, IoError};
use crate::posterior::{
    fitted_values, predict, replicate_data, ConjugateFit, FittedModel, LocationSummary, McmcModel, ModelKind,
    PosteriorError, PredictionSet,
};
use crate::samplers::{
    fit_binomial_latent, fit_latent, fit_pg_logit, fit_response, least_squares, McmcConfig, SamplerError,
};
use crate::samples::{Acceptance, DrawMatrix, PosteriorSamples};
use crate::simulate::{simulate_gp_dataset, SimulationConfig, SimulationError, SimulationMethod, Truth};

/// Command failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Config(String),
    /// Exit code 3.
    Data(String),
    /// Exit code 4.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            CliError::Config(_) => "configuration error",
            CliError::Data(_) => "data error",
            CliError::Numerical(_) => "numerical failure",
        };
        write!(f, "{kind}: {}", self.message())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::ZeroNeighbors | GraphError::InvalidPermutation { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Singular(_) | SamplerError::Factor(_) => CliError::Numerical(e.to_string()),
            SamplerError::GraphMismatch { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ConjugateError> for CliError {
    fn from(e: ConjugateError) -> Self {
        match e {
            ConjugateError::RankDeficient { .. } | ConjugateError::Singular { .. } | ConjugateError::Factor(_) => {
                CliError::Numerical(e.to_string())
            }
            ConjugateError::Data(_) | ConjugateError::GraphMismatch { .. } | ConjugateError::DesignShape { .. } => {
                CliError::Data(e.to_string())
            }
            ConjugateError::Graph(g) => g.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PosteriorError> for CliError {
    fn from(e: PosteriorError) -> Self {
        match e {
            PosteriorError::Factor(_) => CliError::Numerical(e.to_string()),
            PosteriorError::DesignShape { .. } | PosteriorError::Length(..) => CliError::Data(e.to_string()),
            PosteriorError::Conjugate(c) => c.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::ZeroVariance { .. } => CliError::Numerical(e.to_string()),
            DiagnosticsError::Posterior(p) => p.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::NotPositiveDefinite(_) | SimulationError::Factor(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nngp", version, about = "Nearest neighbor Gaussian process spatial regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Worker threads (defaults to NNGP_THREADS, then the config, then all cores).
    #[arg(long, env = "NNGP_THREADS")]
    pub threads: Option<usize>,
    /// Random seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a run directory.
    Fit(FitArgs),
    /// Cross-validated grid search for the conjugate model (fit --method conjugate with a grid).
    Cv(FitArgs),
    /// Predict at new locations from a run directory.
    Predict(PredictArgs),
    /// Model diagnostics for a run directory.
    Diag(DiagArgs),
    /// Simulate a dataset on the unit square.
    Simulate(SimulateArgs),
    /// Empirical semivariogram of least-squares residuals.
    Variogram(VariogramArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// latent, response, conjugate, binomial or logit.
    #[arg(long)]
    pub method: Option<ModelKind>,
    /// Neighbor sidecar: read when it exists, written otherwise.
    #[arg(long)]
    pub neighbor_info: Option<PathBuf>,
    /// Candidate (alpha, phi[, nu]) rows for the conjugate model.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub k_fold: Option<usize>,
    #[arg(long)]
    pub score_rule: Option<ScoreRule>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Run directory written by `fit`.
    #[arg(long)]
    pub run: PathBuf,
    /// Prediction CSV with coordinates and covariates (optionally the response and trials).
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Also write the raw predictive draws.
    #[arg(long)]
    pub save_draws: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Restrict to the named criteria; a refused criterion is then an error.
    #[arg(long)]
    pub dic: bool,
    #[arg(long)]
    pub waic: bool,
    #[arg(long)]
    pub gpd: bool,
    #[arg(long)]
    pub grs: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    /// JSON simulation settings; flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Side of the square holdout grid.
    #[arg(long)]
    pub holdout_grid: Option<usize>,
    /// Binomial responses with this many trials.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Simulate through an NNGP with this many neighbors instead of the dense process.
    #[arg(long)]
    pub nngp_neighbors: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct VariogramArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub n_bins: usize,
    /// Defaults to half the bounding-box diagonal.
    #[arg(long)]
    pub max_dist: Option<f64>,
    #[arg(long, default_value_t = diagnostics::variogram::DEFAULT_VARIOGRAM_CAP)]
    pub cap: usize,
    #[command(flatten)]
    pub common: Common,
}

/// Entry point used by the binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a, false),
        Command::Cv(a) => cmd_fit(a, true),
        Command::Predict(a) => cmd_predict(a),
        Command::Diag(a) => cmd_diag(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Variogram(a) => cmd_variogram(a),
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    fn of(path: &Path) -> Result<Self, CliError> {
        let abs = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        Ok(Self { sha256: io::sha256_file(path)?, path: abs })
    }
}

/// Everything needed to reproduce and reload a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub method: ModelKind,
    pub input: FileRecord,
    pub config_file: FileRecord,
    pub config: RunConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub n: usize,
    pub p: usize,
    pub beta_names: Vec<String>,
    pub theta_names: Vec<String>,
    pub acceptance: Acceptance,
    pub wall_time_seconds: f64,
    pub samples_file: String,
    pub w_file: Option<String>,
    pub omega_file: Option<String>,
    pub neighbor_info_file: Option<String>,
    pub conjugate: Option<ConjugateRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateRecord {
    pub fixed: ConjugateFixed,
    pub beta_mean: Vec<f64>,
    pub beta_precision: Vec<f64>,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub cv_scores_file: Option<String>,
}

const MANIFEST: &str = "manifest.json";
const SAMPLES: &str = "samples.csv";
const W_FILE: &str = "w_samples.bin";
const OMEGA_FILE: &str = "omega_samples.bin";
const NEIGHBOR_FILE: &str = "neighbor_info.json";
const CV_FILE: &str = "cv_scores.csv";

fn load_dataset(input: &Path, cfg: &RunConfig, method: ModelKind) -> Result<SpatialDataset, CliError> {
    let d = io::read_dataset(input, &cfg.columns())?;
    if method.is_binomial() {
        d.as_binomial().map_err(|e| CliError::Data(format!("{}: {e}", input.display())))
    } else {
        Ok(d)
    }
}

fn obtain_graph(data: &SpatialDataset, cfg: &RunConfig, sidecar: Option<&Path>) -> Result<NeighborGraph, CliError> {
    if let Some(path) = sidecar.filter(|p| p.exists()) {
        let g = NeighborGraph::load(path)?;
        if g.len() != data.len() {
            return Err(CliError::Data(format!(
                "{}: neighbor info covers {} locations but the input has {}",
                path.display(),
                g.len(),
                data.len()
            )));
        }
        return Ok(g);
    }
    let ord = order_locations(&data.coords, &cfg.ordering)?;
    let g = build_neighbor_graph(&data.coords, &ord, cfg.n_neighbors, cfg.search)?;
    if let Some(path) = sidecar {
        g.save(path)?;
    }
    Ok(g)
}

fn print_header(method: ModelKind, data: &SpatialDataset, cfg: &RunConfig) {
    let title = match method {
        ModelKind::Latent => "NNGP Latent model",
        ModelKind::Response => "NNGP Response model",
        ModelKind::Conjugate => "NNGP Conjugate model",
        ModelKind::Binomial => "NNGP Latent binomial model",
        ModelKind::Logit => "Polya-Gamma logistic regression",
    };
    let rule = "----------------------------------------";
    eprintln!("{rule}\n\tModel description\n{rule}");
    eprintln!("{title} fit with {} observations.\n", data.len());
    eprintln!("Number of covariates {} (including intercept if specified).\n", data.p);
    if method != ModelKind::Logit {
        eprintln!("Using the {} spatial correlation model.\n", cfg.cov_model.name());
        eprintln!("Using {} nearest neighbors.\n", cfg.n_neighbors);
    }
    if method != ModelKind::Conjugate {
        eprintln!("Number of MCMC samples {}.\n", cfg.n_samples);
    }
    eprintln!("Priors and hyperpriors:");
    match &cfg.priors.beta_norm {
        None => eprintln!("\tbeta flat."),
        Some(_) => eprintln!("\tbeta normal."),
    }
    if let Some([a, b]) = cfg.priors.sigma_sq_ig {
        eprintln!("\tsigma.sq IG hyperpriors shape={a:.5} and scale={b:.5}");
    }
    if matches!(method, ModelKind::Latent | ModelKind::Response) {
        if let Some([a, b]) = cfg.priors.tau_sq_ig {
            eprintln!("\ttau.sq IG hyperpriors shape={a:.5} and scale={b:.5}");
        }
    }
    if method != ModelKind::Conjugate && method != ModelKind::Logit {
        if let Some([a, b]) = cfg.priors.phi_unif {
            eprintln!("\tphi Unif hyperpriors a={a:.5} and b={b:.5}");
        }
        if cfg.cov_model.uses_nu() {
            if let Some([a, b]) = cfg.priors.nu_unif {
                eprintln!("\tnu Unif hyperpriors a={a:.5} and b={b:.5}");
            }
        }
    }
    if method != ModelKind::Conjugate {
        eprintln!("-------------------------------------------------\n\t\tSampling\n-------------------------------------------------");
    }
}

fn cmd_fit(a: FitArgs, cv: bool) -> Result<(), CliError> {
    let config_text = read_text(&a.config)?;
    let mut cfg = RunConfig::from_json(&config_text)?;
    if let Some(m) = a.method {
        cfg.method = Some(m);
    }
    if cv {
        cfg.method = Some(ModelKind::Conjugate);
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.common.threads {
        cfg.threads = Some(t);
    }
    if let Some(k) = a.k_fold {
        cfg.k_fold = Some(k);
    }
    if let Some(r) = a.score_rule {
        cfg.score_rule = r;
    }
    cfg.verbose |= a.common.verbose;
    let method = cfg.method.ok_or(ConfigError::Missing("method (config key or --method)"))?;
    if cv && a.grid.is_none() {
        return Err(CliError::Config("cv requires --grid".into()));
    }
    configure_threads(cfg.threads);
    ensure_dir(&a.output_dir)?;

    let data = load_dataset(&a.input, &cfg, method)?;
    if cfg.verbose {
        print_header(method, &data, &cfg);
    }
    let started = Instant::now();
    let mut manifest = Manifest {
        format: "nngp-run".into(),
        version: 1,
        method,
        input: FileRecord::of(&a.input)?,
        config_file: FileRecord::of(&a.config)?,
        config: cfg.clone(),
        seed: cfg.seed,
        threads: cfg.threads,
        n: data.len(),
        p: data.p,
        beta_names: data.covariate_names.clone(),
        theta_names: Vec::new(),
        acceptance: Acceptance::default(),
        wall_time_seconds: 0.0,
        samples_file: SAMPLES.into(),
        w_file: None,
        omega_file: None,
        neighbor_info_file: None,
        conjugate: None,
    };

    let model = if method == ModelKind::Logit {
        let mc = mcmc_config(&cfg, method)?;
        let s = fit_pg_logit(&data, &cfg.beta_prior()?, &mc)?;
        FittedModel::Mcmc(McmcModel { kind: method, family: cfg.cov_model, data, graph: None, samples: s })
    } else if method == ModelKind::Conjugate {
        fit_conjugate_run(&a, &cfg, data, &mut manifest)?
    } else {
        let graph = obtain_graph(&data, &cfg, a.neighbor_info.as_deref())?;
        let needs_tau = method != ModelKind::Binomial;
        let priors = cfg.prior_spec(needs_tau)?;
        let mc = mcmc_config(&cfg, method)?;
        let s = match method {
            ModelKind::Latent => fit_latent(&data, &graph, &priors, &mc, cfg.cov_model)?,
            ModelKind::Response => fit_response(&data, &graph, &priors, &mc, cfg.cov_model)?,
            _ => fit_binomial_latent(&data, &graph, &priors, &mc, cfg.cov_model)?,
        };
        FittedModel::Mcmc(McmcModel { kind: method, family: cfg.cov_model, data, graph: Some(graph), samples: s })
    };

    if let FittedModel::Mcmc(m) = &model {
        let (names, table) = m.samples.table();
        io::write_matrix_csv(&a.output_dir.join(SAMPLES), &names, &table)?;
        if let Some(w) = &m.samples.w {
            io::write_matrix_bin(&a.output_dir.join(W_FILE), w)?;
            manifest.w_file = Some(W_FILE.into());
        }
        if let Some(o) = &m.samples.omega {
            io::write_matrix_bin(&a.output_dir.join(OMEGA_FILE), o)?;
            manifest.omega_file = Some(OMEGA_FILE.into());
        }
        if let Some(g) = &m.graph {
            g.save(&a.output_dir.join(NEIGHBOR_FILE))?;
            manifest.neighbor_info_file = Some(NEIGHBOR_FILE.into());
        }
        manifest.theta_names = m.samples.theta_names.clone();
        manifest.acceptance = m.samples.acceptance.clone();
    }
    if cfg.fit_rep {
        write_fit_rep(&model, &cfg, &a.output_dir)?;
    }
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    write_json(&a.output_dir.join(MANIFEST), &manifest)?;
    if cfg.verbose {
        eprintln!("Run written to {}", a.output_dir.display());
    }
    Ok(())
}

fn mcmc_config(cfg: &RunConfig, method: ModelKind) -> Result<McmcConfig, CliError> {
    let needs_tau = matches!(method, ModelKind::Latent | ModelKind::Response);
    let (starting, tuning) = if method == ModelKind::Logit {
        let mut s = crate::samplers::Starting { phi: 1.0, sigma_sq: 1.0, tau_sq: 0.0, nu: None, beta: None, w: None };
        s.beta = cfg.starting.beta.clone();
        (s, crate::samplers::Tuning::default())
    } else {
        (cfg.starting(needs_tau)?, cfg.tuning(method)?)
    };
    let mut mc = McmcConfig::new(cfg.n_samples, starting, tuning, cfg.seed);
    mc.n_report = cfg.n_report;
    mc.store_w = cfg.store_w;
    mc.verbose = cfg.verbose;
    Ok(mc)
}

fn fit_conjugate_run(
    a: &FitArgs,
    cfg: &RunConfig,
    data: SpatialDataset,
    manifest: &mut Manifest,
) -> Result<FittedModel, CliError> {
    let beta_prior = cfg.beta_prior()?;
    let sigma_ig = cfg.sigma_sq_ig()?;
    let mut cv_file = None;
    let (model, graph) = if let Some(grid_path) = &a.grid {
        let grid = io::read_grid(grid_path)?;
        let k_fold = cfg.k_fold.ok_or(ConfigError::Missing("k.fold (config key or --k-fold)"))?;
        let cvc = CvConfig {
            k_fold,
            score_rule: cfg.score_rule,
            n_neighbors: cfg.n_neighbors,
            ordering: cfg.ordering.clone(),
            search: cfg.search,
            seed: cfg.seed,
        };
        let (scores, model) = grid_search_cv(&data, cfg.cov_model, &grid, &beta_prior, sigma_ig, &cvc)?;
        let with_nu = grid.iter().any(|r| r.nu.is_some());
        let mut header: Vec<String> = vec!["alpha".into(), "phi".into()];
        if with_nu {
            header.push("nu".into());
        }
        header.extend(["rmspe".into(), "crps".into()]);
        let rows = scores.rows.iter().enumerate().map(|(k, r)| {
            let mut v = vec![r.alpha, r.phi];
            if with_nu {
                v.push(r.nu.unwrap_or(f64::NAN));
            }
            v.extend([scores.rmspe[k], scores.crps[k]]);
            v
        });
        io::write_csv(&a.output_dir.join(CV_FILE), &header, rows)?;
        cv_file = Some(CV_FILE.to_string());
        if cfg.verbose {
            let b = scores.best_row();
            eprintln!("k.fold.scores written to {}", a.output_dir.join(CV_FILE).display());
            eprintln!("Selected alpha = {}, phi = {} by {:?}", b.alpha, b.phi, cfg.score_rule);
        }
        let ord = order_locations(&data.coords, &cfg.ordering)?;
        let graph = build_neighbor_graph(&data.coords, &ord, cfg.n_neighbors, cfg.search)?;
        (model, graph)
    } else {
        let ta = cfg.theta_alpha.as_ref().ok_or(ConfigError::Missing("theta.alpha (or --grid)"))?;
        let fixed = ConjugateFixed { phi: ta.phi, alpha: ta.alpha, nu: ta.nu };
        let graph = obtain_graph(&data, cfg, a.neighbor_info.as_deref())?;
        let post = fit_conjugate(&data, &graph, cfg.cov_model, fixed, &beta_prior, sigma_ig)?;
        let od = OrderedData::new(&data, graph.ordering());
        (ConjugateModel::new(post, od, cfg.n_neighbors), graph)
    };
    let post = &model.posterior;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = sample_conjugate_posterior(post, cfg.conjugate_samples, data.covariate_names.clone(), &mut rng);
    let (names, table) = draws.table();
    io::write_matrix_csv(&a.output_dir.join(SAMPLES), &names, &table)?;
    graph.save(&a.output_dir.join(NEIGHBOR_FILE))?;
    manifest.neighbor_info_file = Some(NEIGHBOR_FILE.into());
    manifest.theta_names = draws.theta_names.clone();
    manifest.conjugate = Some(ConjugateRecord {
        fixed: post.fixed,
        beta_mean: post.beta_mean.clone(),
        beta_precision: post.precision.clone(),
        ig_shape: post.ig_shape,
        ig_scale: post.ig_scale,
        cv_scores_file: cv_file,
    });
    let beta_names = data.covariate_names.clone();
    Ok(FittedModel::Conjugate(ConjugateFit { model, graph, data, beta_names }))
}

fn summary_rows(s: &LocationSummary) -> impl Iterator<Item = Vec<f64>> + '_ {
    s.mean.iter().zip(&s.quantiles).map(|(m, q)| vec![*m, q[0], q[1], q[2]])
}

fn summary_header(prefix: &str) -> Vec<String> {
    ["mean", "q2.5", "q50", "q97.5"].iter().map(|s| format!("{prefix}{s}")).collect()
}

fn write_fit_rep(model: &FittedModel, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let sub = cfg.sub_sample();
    let fitted = fitted_values(model, &sub)?;
    io::write_csv(&dir.join("fitted.csv"), &summary_header(""), summary_rows(&fitted.values))?;
    let reps = replicate_data(model, &sub, cfg.conjugate_samples, cfg.seed)?;
    let summary = reps.column_quantiles();
    let means = reps.column_means();
    io::write_csv(
        &dir.join("replicates.csv"),
        &summary_header(""),
        means.iter().zip(&summary).map(|(m, q)| vec![*m, q[0], q[1], q[2]]),
    )?;
    Ok(())
}

/// Reloads a fitted model from a run directory.
pub fn load_run(dir: &Path) -> Result<(Manifest, FittedModel), CliError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    let input = &manifest.input.path;
    let hash = io::sha256_file(input)?;
    if hash != manifest.input.sha256 {
        return Err(CliError::Data(format!("{}: input changed since the fit (hash mismatch)", input.display())));
    }
    let cfg = &manifest.config;
    let data = load_dataset(input, cfg, manifest.method)?;
    let graph = match &manifest.neighbor_info_file {
        Some(f) => Some(NeighborGraph::load(&dir.join(f))?),
        None => None,
    };
    if let Some(rec) = &manifest.conjugate {
        let graph = graph.ok_or_else(|| CliError::Data("conjugate run lacks neighbor info".into()))?;
        let post = fit_conjugate(&data, &graph, cfg.cov_model, rec.fixed, &cfg.beta_prior()?, cfg.sigma_sq_ig()?)?;
        let od = OrderedData::new(&data, graph.ordering());
        let model = ConjugateModel::new(post, od, graph.m());
        let beta_names = data.covariate_names.clone();
        return Ok((manifest, FittedModel::Conjugate(ConjugateFit { model, graph, data, beta_names })));
    }
    let (_, table) = io::read_matrix_csv(&dir.join(&manifest.samples_file))?;
    let p = manifest.beta_names.len();
    let k = manifest.theta_names.len();
    if table.cols != p + k {
        return Err(CliError::Data(format!("{}: unexpected column count", manifest.samples_file)));
    }
    let mut beta = DrawMatrix::with_cols(p);
    let mut theta = DrawMatrix::with_cols(k);
    for r in 0..table.rows {
        beta.push(&table.row(r)[..p]);
        theta.push(&table.row(r)[p..]);
    }
    let w = manifest.w_file.as_ref().map(|f| io::read_matrix_bin(&dir.join(f))).transpose()?;
    let omega = manifest.omega_file.as_ref().map(|f| io::read_matrix_bin(&dir.join(f))).transpose()?;
    let samples = PosteriorSamples {
        beta_names: manifest.beta_names.clone(),
        beta,
        theta_names: manifest.theta_names.clone(),
        theta,
        w,
        omega,
        acceptance: manifest.acceptance.clone(),
    };
    let model = McmcModel { kind: manifest.method, family: cfg.cov_model, data, graph, samples };
    Ok((manifest, FittedModel::Mcmc(model)))
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    configure_threads(a.common.threads);
    let (manifest, model) = load_run(&a.run)?;
    let cfg = &manifest.config;
    let out = a.output_dir.clone().unwrap_or_else(|| a.run.clone());
    ensure_dir(&out)?;
    let mut cols = cfg.columns();
    if cols.covariates.is_none() {
        let start = cfg.intercept as usize;
        cols.covariates = Some(manifest.beta_names[start..].to_vec());
    }
    let new: PredictionSet = io::read_prediction_set(&a.input, &cols)?;
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let pred = predict(&model, &new, &cfg.sub_sample(), seed)?;

    let mut header = vec![cfg.coords[0].clone(), cfg.coords[1].clone()];
    header.extend(summary_header(""));
    let conj = pred.y.t.as_ref();
    if conj.is_some() {
        header.extend(["location".into(), "scale".into(), "df".into()]);
    }
    if pred.w.is_some() {
        header.extend(summary_header("w."));
    }
    let rows = (0..new.len()).map(|i| {
        let s = new.coords.point(i);
        let q = pred.y.quantiles[i];
        let mut r = vec![s[0], s[1], pred.y.mean[i], q[0], q[1], q[2]];
        if let Some(t) = conj {
            r.extend([t[i].location, t[i].scale, t[i].df]);
        }
        if let Some(w) = &pred.w {
            let q = w.quantiles[i];
            r.extend([w.mean[i], q[0], q[1], q[2]]);
        }
        r
    });
    io::write_csv(&out.join("predictions.csv"), &header, rows)?;
    if a.save_draws {
        if let Some(d) = &pred.y.draws {
            let header: Vec<String> = (1..=d.rows).map(|k| format!("draw{k}")).collect();
            io::write_csv(&out.join("prediction_draws.csv"), &header, (0..d.cols).map(|c| d.column(c)))?;
        }
    }

    // Holdout scores when the prediction file carries the response.
    let mut with_y = cols.clone();
    with_y.response = Some(cfg.response.clone());
    if let Ok(obs) = io::read_dataset(&a.input, &with_y) {
        let scores = predictive_scores(&pred.y, &obs.y);
        write_json(&out.join("prediction_scores.json"), &scores)?;
        if a.common.verbose {
            let report = DiagnosticsReport { scores: Some(scores), ..Default::default() };
            eprint!("{}", report.to_table());
        }
    }
    Ok(())
}

/// CRPS, RMSPE and 95% interval coverage/width of predictive summaries against holdout values.
pub fn predictive_scores(pred: &LocationSummary, y: &[f64]) -> PredictiveScores {
    let n = y.len() as f64;
    let crps = match &pred.t {
        Some(t) => t.iter().zip(y).map(|(d, v)| crps_t(d.location, d.scale, d.df, *v)).sum::<f64>() / n,
        None => {
            let var = pred.variance();
            pred.mean.iter().zip(&var).zip(y).map(|((m, s2), v)| crps_gaussian(*m, s2.sqrt(), *v)).sum::<f64>() / n
        }
    };
    let intervals: Vec<(f64, f64)> = pred.quantiles.iter().map(|q| (q[0], q[2])).collect();
    let (coverage, width) = coverage_width(&intervals, y);
    PredictiveScores { crps, rmspe: rmspe(&pred.mean, y), coverage, width }
}

fn cmd_diag(a: DiagArgs) -> Result<(), CliError> {
    configure_threads(a.common.threads);
    let (manifest, model) = load_run(&a.run)?;
    let cfg = &manifest.config;
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let sub = cfg.sub_sample();
    let explicit = a.dic || a.waic || a.gpd || a.grs;
    let mut report = if explicit {
        let mut r = DiagnosticsReport { model: Some(model.kind()), ..Default::default() };
        if a.dic {
            r.dic = Some(diagnostics::dic(&model, &sub)?);
        }
        if a.waic {
            r.waic = Some(diagnostics::waic(&model, &sub)?);
        }
        if a.gpd || a.grs {
            let reps = replicate_data(&model, &sub, cfg.conjugate_samples, seed)?;
            if a.gpd {
                r.gpd = Some(diagnostics::gpd(&reps, &model.data().y)?);
            }
            if a.grs {
                r.grs = Some(diagnostics::grs(&reps, &model.data().y)?);
            }
        }
        r
    } else {
        diagnostics::diagnose(&model, &sub, cfg.conjugate_samples, seed)?
    };
    if report.applicability.is_empty() {
        report.applicability.push("computed as requested".into());
    }
    let out = a.output_dir.clone().unwrap_or_else(|| a.run.clone());
    ensure_dir(&out)?;
    write_json(&out.join("diagnostics.json"), &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    configure_threads(a.common.threads);
    let mut cfg = match &a.config {
        Some(p) => read_json::<SimulationConfig>(p).map_err(|e| CliError::Config(e.message().to_string()))?,
        None => SimulationConfig::standard(a.n.unwrap_or(2000), 0),
    };
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if a.holdout_grid.is_some() {
        cfg.holdout_grid = a.holdout_grid;
    }
    if a.trials.is_some() {
        cfg.trials = a.trials;
    }
    if let Some(m) = a.nngp_neighbors {
        cfg.method = SimulationMethod::Nngp { m };
    }
    ensure_dir(&a.output_dir)?;
    let sim = simulate_gp_dataset(&cfg)?;
    io::write_dataset(&a.output_dir.join("train.csv"), &sim.train, ["x", "y"], "response")?;
    let w_rows = |d: &SpatialDataset, w: &[f64]| -> Vec<Vec<f64>> {
        (0..d.len()).map(|i| vec![d.coords.point(i)[0], d.coords.point(i)[1], w[i]]).collect()
    };
    let wh = vec!["x".to_string(), "y".to_string(), "w".to_string()];
    io::write_csv(&a.output_dir.join("train_w.csv"), &wh, w_rows(&sim.train, &sim.w).into_iter())?;
    if let (Some(h), Some(hw)) = (&sim.holdout, &sim.holdout_w) {
        io::write_dataset(&a.output_dir.join("holdout.csv"), h, ["x", "y"], "response")?;
        io::write_csv(&a.output_dir.join("holdout_w.csv"), &wh, w_rows(h, hw).into_iter())?;
    }
    let truth = Truth { effective_range: crate::covariance::effective_range(cfg.spec.phi), config: cfg };
    write_json(&a.output_dir.join("truth.json"), &truth)?;
    Ok(())
}

fn cmd_variogram(a: VariogramArgs) -> Result<(), CliError> {
    configure_threads(a.common.threads);
    let cfg = match &a.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    let data = io::read_dataset(&a.input, &cfg.columns())?;
    let od = OrderedData::new(&data, &crate::geo::Ordering::identity(data.len()));
    let beta = least_squares(&od)?;
    let resid: Vec<f64> = data.y.iter().zip(od.mean(&beta)).map(|(y, m)| y - m).collect();
    let max_dist = a.max_dist.unwrap_or_else(|| {
        let pts = data.coords.points();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        0.5 * ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    });
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let bins = empirical_semivariogram(&data.coords, &resid, a.n_bins, max_dist, a.cap, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(&a.output_dir)?;
    let header = vec!["distance".to_string(), "semivariance".into(), "count".into()];
    io::write_csv(
        &a.output_dir.join("variogram.csv"),
        &header,
        bins.iter().map(|b| vec![b.distance, b.semivariance, b.count as f64]),
    )?;
    let fit = fit_exponential_variogram(&bins);
    write_json(&a.output_dir.join("variogram_fit.json"), &fit)?;
    println!("{:>12} {:>14} {:>10}", "distance", "semivariance", "count");
    for b in &bins {
        println!("{:>12.4} {:>14.5} {:>10}", b.distance, b.semivariance, b.count);
    }
    if let Some(f) = fit {
        println!("exponential fit: nugget {:.4}, partial sill {:.4}, phi {:.4}", f.nugget, f.partial_sill, f.phi);
    }
    Ok(())
}
