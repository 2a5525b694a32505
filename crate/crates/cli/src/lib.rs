//! The `awac` command-line tool: train, validate, bench, stats, serve, replay.
//!
//! Every command resolves its configuration as CLI flags over the TOML file
//! over built-in defaults, writes its outputs into a run directory together
//! with a `manifest.json` and the effective `config.toml`, and exits with
//! [`CliError::exit_code`].

use awac_core::allocator::Allocator;
use awac_core::bench::{run_bench, BenchError, BenchOutcome, Condition};
use awac_core::config::{AppConfig, ConfigError};
use awac_core::env::{feasible_actions, run_episodes, EnvError};
use awac_core::ppo::{
    evaluate_policy, load_policy, load_policy_for, save_policy, train_with_options, PolicyParams, PpoError,
    TrainOptions, TrainReport,
};
use awac_core::session::replay;
use awac_core::stats::{normalize_rows, paired_t_test, AnovaReport, PairedTest, StatsError, TrialMatrix};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::Io(source) => CliError::Io {
                path: "checkpoint".into(),
                source,
            },
            PpoError::NonFinite { .. } | PpoError::NonPositiveRatio(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Io(source) => CliError::Io {
                path: "csv".into(),
                source,
            },
            StatsError::NonFinite { .. } | StatsError::NonPositiveRowMean { .. } | StatsError::InvalidDf(..) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Stats(s) => s.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "awac", version, about = "Affective workload allocation: train, evaluate, analyse, serve")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the command (overrides the file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent of per-run output directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_root: PathBuf,
    /// Exact output directory instead of a timestamped one.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an allocation policy with PPO.
    Train(TrainArgs),
    /// Compare a policy with random allocation on paired episodes.
    Validate(ValidateArgs),
    /// Simulate strategies or tasks across teams and run the statistics.
    Bench(BenchArgs),
    /// rmANOVA and Bonferroni pairwise tests on a CSV matrix.
    Stats(StatsArgs),
    /// Run the live session service.
    Serve(ServeArgs),
    /// Verify a session log and print its reconstructed ledger.
    Replay(ReplayArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EnvOverrides {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub total_views: Option<usize>,
    #[arg(long)]
    pub n_operators: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub rollout_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Also save a checkpoint every N updates.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub env: EnvOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Checkpoint path, or `random` to validate the random baseline itself.
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[command(flatten)]
    pub env: EnvOverrides,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    /// Comma-separated strategies, e.g. fixed-equal,awac-isps.
    #[arg(long, value_delimiter = ',', conflicts_with = "tasks")]
    pub strategies: Vec<Condition>,
    /// Comma-separated tasks A-H (the default is all eight).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<Condition>,
    #[arg(long)]
    pub teams: Option<usize>,
    /// Policy for the adaptive strategies; without it they use greedy lookahead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
    #[command(flatten)]
    pub env: EnvOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// CSV with a leading id column and one column per condition.
    #[arg(long)]
    pub csv: PathBuf,
    /// Column set to analyse, comma-separated; repeat for several sets.
    #[arg(long = "columns")]
    pub column_sets: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Divide each row by its mean first.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Session log directory (default: `<run dir>/sessions`).
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Session milliseconds per wall-clock millisecond.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub seed: u64,
    pub config: AppConfig,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn load_config(global: &GlobalArgs) -> Result<AppConfig, CliError> {
    let cfg = match &global.config {
        Some(p) => AppConfig::from_path(p)?,
        None => AppConfig::default(),
    };
    Ok(cfg)
}

fn apply_env(cfg: &mut AppConfig, o: &EnvOverrides) {
    if let Some(k) = o.kappa {
        cfg.env.kappa = k;
    }
    if let Some(s) = o.noise_sigma {
        cfg.env.noise_sigma = s;
    }
    if let Some(v) = o.total_views {
        cfg.env.total_views = v;
    }
    if let Some(n) = o.n_operators {
        cfg.env.n_operators = n;
    }
}

/// Picks (and creates) the run directory.
pub fn run_dir(global: &GlobalArgs, command: &str, seed: u64) -> Result<PathBuf, CliError> {
    let dir = match &global.out_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            let base = global.runs_root.join(format!("{command}-{stamp}-seed{seed}"));
            let mut dir = base.clone();
            let mut k = 2;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn begin(global: &GlobalArgs, command: &str, seed: u64, config: &AppConfig) -> Result<Self, CliError> {
        let dir = run_dir(global, command, seed)?;
        let manifest = RunManifest {
            tool: "awac".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        };
        write_file(&dir.join("config.toml"), config.to_toml_string().as_bytes())?;
        Ok(Self { dir, manifest })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.display().to_string());
    }

    fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.finished_at = chrono::Utc::now().to_rfc3339();
        self.manifest.outputs.push("config.toml".into());
        let json = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_file(&self.dir.join("manifest.json"), &json)?;
        Ok(self.dir)
    }
}

// ---- train ----

pub struct TrainOutput {
    pub policy: PolicyParams,
    pub report: TrainReport,
}

/// Trains and writes `policy.json` and `metrics.csv` into `dir`.
pub fn train_into(cfg: &AppConfig, dir: &Path, checkpoint_every: usize) -> Result<TrainOutput, CliError> {
    let opts = TrainOptions {
        checkpoint_dir: (checkpoint_every > 0).then(|| dir.join("checkpoints")),
        checkpoint_every,
    };
    if let Some(d) = &opts.checkpoint_dir {
        fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let (policy, report) = train_with_options(&cfg.env, &cfg.ppo, &cfg.hpm, &opts)?;
    if !policy.is_finite() {
        return Err(CliError::Numeric("trained parameters are not finite".into()));
    }
    save_policy(&policy, &dir.join("policy.json"))?;
    let metrics = dir.join("metrics.csv");
    let file = fs::File::create(&metrics).map_err(|e| CliError::io(&metrics, e))?;
    report.write_csv(file).map_err(|e| csv_err(&metrics, e))?;
    Ok(TrainOutput { policy, report })
}

fn cmd_train(global: &GlobalArgs, args: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = load_config(global)?;
    if let Some(s) = global.seed {
        cfg.ppo.seed = s;
        cfg.env.seed = s;
    }
    if let Some(n) = args.total_steps {
        cfg.ppo.total_steps = n;
    }
    if let Some(n) = args.rollout_steps {
        cfg.ppo.rollout_steps = n;
    }
    if let Some(lr) = args.learning_rate {
        cfg.ppo.learning_rate = lr;
    }
    apply_env(&mut cfg, &args.env);
    cfg.validate()?;
    let mut run = Run::begin(global, "train", cfg.ppo.seed, &cfg)?;
    run.path("policy.json");
    run.path("metrics.csv");
    let out = train_into(&cfg, &run.dir, args.checkpoint_every)?;
    let dir = run.finish()?;
    Ok(format!(
        "trained {} updates, {} episodes, trailing mean episode reward {}\nrun directory: {}\n",
        out.report.updates.len(),
        out.report.episodes,
        out.report
            .trailing_mean_episode_reward
            .map_or("n/a".to_string(), |r| format!("{r:.4}")),
        dir.display()
    ))
}

// ---- validate ----

/// Who is compared with the random baseline.
#[derive(Debug, Clone)]
pub enum Candidate {
    Policy(Arc<PolicyParams>),
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub candidate: String,
    pub episodes: usize,
    pub seed: u64,
    /// Per-episode metric: team performance of the final state.
    pub metric: String,
    pub test: PairedTest,
    pub candidate_better: usize,
    pub ties: usize,
    pub candidate_worse: usize,
    /// Fewer than two episodes: no test statistic.
    pub insufficient_n: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOutput {
    pub report: ValidateReport,
    pub candidate_scores: Vec<f64>,
    pub random_scores: Vec<f64>,
    pub seeds: Vec<u64>,
}

fn random_scores(cfg: &AppConfig, episodes: usize, seed: u64) -> Result<(Vec<f64>, Vec<u64>), CliError> {
    let actions = feasible_actions(&cfg.env);
    let recs = run_episodes(&cfg.env, &cfg.hpm, episodes, seed, |_, _, rng| {
        actions[rng.random_range(0..actions.len())].clone()
    })?;
    Ok((
        recs.iter().map(|r| r.final_team_perf).collect(),
        recs.iter().map(|r| r.seed).collect(),
    ))
}

/// Paired evaluation on identical episode seeds.
pub fn validate_candidate(
    cfg: &AppConfig,
    candidate: &Candidate,
    episodes: usize,
    seed: u64,
) -> Result<ValidateOutput, CliError> {
    cfg.env.validate()?;
    let (random, seeds) = random_scores(cfg, episodes, seed)?;
    let (name, cand) = match candidate {
        Candidate::Random => ("random".to_string(), random_scores(cfg, episodes, seed)?.0),
        Candidate::Policy(p) => (
            "policy".to_string(),
            evaluate_policy(p, &cfg.env, &cfg.hpm, episodes, seed)?
                .iter()
                .map(|r| r.final_team_perf)
                .collect(),
        ),
    };
    let test = paired_t_test(&cand, &random)?;
    let better = cand.iter().zip(&random).filter(|(c, r)| c > r).count();
    let ties = cand.iter().zip(&random).filter(|(c, r)| c == r).count();
    Ok(ValidateOutput {
        report: ValidateReport {
            candidate: name,
            episodes,
            seed,
            metric: "final_team_perf".into(),
            insufficient_n: test.p_value.is_none(),
            test,
            candidate_better: better,
            ties,
            candidate_worse: episodes - better - ties,
        },
        candidate_scores: cand,
        random_scores: random,
        seeds,
    })
}

pub fn render_validate(r: &ValidateReport) -> String {
    let t = &r.test;
    let mut s = String::new();
    let _ = writeln!(s, "{} vs random over {} paired episodes (seed {})", r.candidate, r.episodes, r.seed);
    let _ = writeln!(s, "mean {:<8} {:.6}", r.candidate, t.mean_a);
    let _ = writeln!(s, "mean random   {:.6}", t.mean_b);
    let _ = writeln!(s, "mean diff     {:.6}", t.mean_diff);
    let _ = writeln!(s, "better / tie / worse: {} / {} / {}", r.candidate_better, r.ties, r.candidate_worse);
    match (t.t_stat, t.df, t.p_value) {
        (Some(tv), Some(df), Some(p)) => {
            let _ = writeln!(s, "paired t({df}) = {tv:.4}, p = {p:.3e}");
        }
        _ => {
            let _ = writeln!(s, "paired test: insufficient n");
        }
    }
    s
}

fn cmd_validate(global: &GlobalArgs, args: &ValidateArgs) -> Result<String, CliError> {
    let mut cfg = load_config(global)?;
    if let Some(s) = global.seed {
        cfg.validate.seed = s;
    }
    if let Some(n) = args.episodes {
        cfg.validate.episodes = n;
    }
    apply_env(&mut cfg, &args.env);
    cfg.validate()?;
    let mut run = Run::begin(global, "validate", cfg.validate.seed, &cfg)?;
    let candidate = if args.policy == "random" {
        Candidate::Random
    } else {
        let p = PathBuf::from(&args.policy);
        run.input(&p);
        let n_actions = feasible_actions(&cfg.env).len();
        Candidate::Policy(Arc::new(load_policy_for(&p, cfg.env.observation_dim(), n_actions)?))
    };
    let out = validate_candidate(&cfg, &candidate, cfg.validate.episodes, cfg.validate.seed)?;
    let json = run.path("validate.json");
    write_file(&json, &serde_json::to_vec_pretty(&out.report).expect("report serializes"))?;
    let csv_path = run.path("episodes.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    w.write_record(["episode", "seed", "candidate", "random"])
        .map_err(|e| csv_err(&csv_path, e))?;
    for i in 0..out.seeds.len() {
        w.write_record([
            i.to_string(),
            out.seeds[i].to_string(),
            out.candidate_scores[i].to_string(),
            out.random_scores[i].to_string(),
        ])
        .map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let text = render_validate(&out.report);
    write_file(&run.path("validate.txt"), text.as_bytes())?;
    let dir = run.finish()?;
    Ok(format!("{text}run directory: {}\n", dir.display()))
}

// ---- bench ----

pub fn bench_conditions(args: &BenchArgs) -> Vec<Condition> {
    if !args.strategies.is_empty() {
        args.strategies.clone()
    } else if !args.tasks.is_empty() {
        args.tasks.clone()
    } else {
        awac_core::allocator::TaskKind::ALL.into_iter().map(Condition::Task).collect()
    }
}

pub fn bench_with(cfg: &AppConfig, conditions: &[Condition], policy: Option<Arc<PolicyParams>>) -> Result<BenchOutcome, CliError> {
    let mut alloc = Allocator::new(cfg.env.clone(), cfg.hpm);
    if let Some(p) = policy {
        alloc = alloc.with_policy(p).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(run_bench(conditions, &cfg.env, &alloc, &cfg.bench)?)
}

/// Writes `raw.csv`, `normalized.csv`, `report.json`, `report.txt`.
pub fn write_bench(dir: &Path, out: &BenchOutcome) -> Result<(), CliError> {
    for (name, m) in [("raw.csv", &out.raw), ("normalized.csv", &out.normalized)] {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        m.write_csv(file, "team")?;
    }
    write_file(
        &dir.join("report.json"),
        &serde_json::to_vec_pretty(&out.report).expect("report serializes"),
    )?;
    write_file(&dir.join("report.txt"), out.report.render_text().as_bytes())
}

fn cmd_bench(global: &GlobalArgs, args: &BenchArgs) -> Result<String, CliError> {
    let mut cfg = load_config(global)?;
    if let Some(s) = global.seed {
        cfg.bench.seed = s;
    }
    if let Some(t) = args.teams {
        cfg.bench.teams = t;
    }
    apply_env(&mut cfg, &args.env);
    cfg.validate()?;
    let conditions = bench_conditions(args);
    let mut run = Run::begin(global, "bench", cfg.bench.seed, &cfg)?;
    let policy = match &args.checkpoint {
        Some(p) => {
            run.input(p);
            Some(Arc::new(load_policy(p)?))
        }
        None => None,
    };
    let out = bench_with(&cfg, &conditions, policy)?;
    for name in ["raw.csv", "normalized.csv", "report.json", "report.txt"] {
        run.path(name);
    }
    write_bench(&run.dir, &out)?;
    let dir = run.finish()?;
    let body = match args.format {
        OutputFormat::Text => out.report.render_text(),
        OutputFormat::Json => serde_json::to_string_pretty(&out.report).expect("report serializes") + "\n",
    };
    Ok(format!("{body}run directory: {}\n", dir.display()))
}

// ---- stats ----

pub fn stats_reports(
    matrix: &TrialMatrix,
    column_sets: &[Vec<String>],
    alpha: f64,
    normalize: bool,
) -> Result<Vec<AnovaReport>, CliError> {
    let m = if normalize { normalize_rows(matrix)? } else { matrix.clone() };
    let sets: Vec<Vec<String>> = if column_sets.is_empty() {
        vec![m.col_labels().to_vec()]
    } else {
        column_sets.to_vec()
    };
    sets.iter()
        .map(|cols| Ok(AnovaReport::build(&m.select(cols)?, alpha)))
        .collect()
}

fn cmd_stats(global: &GlobalArgs, args: &StatsArgs) -> Result<String, CliError> {
    let cfg = load_config(global)?;
    let alpha = args.alpha.unwrap_or(cfg.bench.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let mut run = Run::begin(global, "stats", global.seed.unwrap_or(0), &cfg)?;
    run.input(&args.csv);
    let file = fs::File::open(&args.csv).map_err(|e| CliError::io(&args.csv, e))?;
    let m = TrialMatrix::from_csv_reader(file)?;
    let sets: Vec<Vec<String>> = args
        .column_sets
        .iter()
        .map(|s| s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect())
        .collect();
    let reports = stats_reports(&m, &sets, alpha, args.normalize)?;
    let text: String = reports.iter().map(|r| r.render_text() + "\n").collect();
    write_file(
        &run.path("stats.json"),
        &serde_json::to_vec_pretty(&reports).expect("reports serialize"),
    )?;
    write_file(&run.path("stats.txt"), text.as_bytes())?;
    let dir = run.finish()?;
    let body = match args.format {
        OutputFormat::Text => text,
        OutputFormat::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
    };
    Ok(format!("{body}run directory: {}\n", dir.display()))
}

// ---- serve / replay ----

fn cmd_serve(global: &GlobalArgs, args: &ServeArgs) -> Result<String, CliError> {
    let cfg = load_config(global)?;
    if !(args.time_scale.is_finite() && args.time_scale > 0.0) {
        return Err(CliError::Config("time_scale must be positive".into()));
    }
    let mut run = Run::begin(global, "serve", global.seed.unwrap_or(0), &cfg)?;
    let log_dir = args.log_dir.clone().unwrap_or_else(|| run.path("sessions"));
    let policy = match &args.checkpoint {
        Some(p) => {
            run.input(p);
            Some(Arc::new(load_policy(p)?))
        }
        None => None,
    };
    let server_cfg = awac_server::ServerConfig {
        log_dir: log_dir.clone(),
        session: cfg.session.clone(),
        hpm: cfg.hpm,
        policy,
        time_scale: args.time_scale,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    let bind = args.bind.clone();
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::io(Path::new(&bind), e))?;
        let addr = listener.local_addr().map_err(|e| CliError::io(Path::new(&bind), e))?;
        tracing::info!("listening on http://{addr}, logs in {}", log_dir.display());
        let state = awac_server::AppState::new(server_cfg);
        awac_server::serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::io(Path::new(&bind), e))
    })?;
    let dir = run.finish()?;
    Ok(format!("stopped; run directory: {}\n", dir.display()))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn cmd_replay(args: &ReplayArgs) -> Result<String, CliError> {
    let file = fs::File::open(&args.log).map_err(|e| CliError::io(&args.log, e))?;
    let out = replay(std::io::BufReader::new(file)).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(serde_json::to_string_pretty(&out).expect("outcome serializes") + "\n")
}

/// Runs one parsed invocation and returns what to print on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(&cli.global, a),
        Command::Validate(a) => cmd_validate(&cli.global, a),
        Command::Bench(a) => cmd_bench(&cli.global, a),
        Command::Stats(a) => cmd_stats(&cli.global, a),
        Command::Serve(a) => cmd_serve(&cli.global, a),
        Command::Replay(a) => cmd_replay(a),
        Command::Config => Ok(load_config(&cli.global)?.to_toml_string()),
    }
}
