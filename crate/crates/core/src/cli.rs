//! Command-line entry point: `train`, `eval`, `play` and `serve`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration
//! error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::a3c::{train, A3cError, Hyperparams, TrainConfig};
use crate::engine::{EntityId, ScriptedPolicy};
use crate::eval::{evaluate, export_report, EvalError, HumanReference, MilestoneReport, ReportFormat, DEFAULT_EVAL_STEPS, TABLE1};
use crate::mts::{NetworkSource, StrategyConfig};
use crate::nn::CheckpointSet;
use crate::observation::ObsTensor;
use crate::scenario::{ConfigError, RunFile, Scenario};
use crate::server::{serve, ServeConfig, ServerError, Session, SessionConfig};

#[derive(Debug, Parser)]
#[command(name = "tankdef", version, about = "Tank-defence environment, goal-map actor-critic training and live sessions")]
pub struct Cli {
    /// Log filter, e.g. `info` or `tankdef=debug`.
    #[arg(long, global = true, env = "TANKDEF_LOG", default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with asynchronous actor-critic workers.
    Train(TrainArgs),
    /// Evaluate checkpoints with the greedy policy and write a report.
    Eval(EvalArgs),
    /// Run episodes headless and print a summary per episode.
    Play(PlayArgs),
    /// Serve a live session over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// `default`, `small` or a stage file.
    #[arg(long)]
    pub stage: Option<String>,
    /// Strategy preset (`goal_map_pair`, `baseline_pair`, `scripted:<policy>`) or file.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Engine config file.
    #[arg(long)]
    pub engine: Option<String>,
    /// Observation config file.
    #[arg(long)]
    pub obs: Option<String>,
}

impl ScenarioArgs {
    fn resolve(&self, default_strategy: &str) -> Result<Scenario, CliError> {
        let run = RunFile {
            stage: self.stage.clone(),
            strategy: Some(self.strategy.clone().unwrap_or_else(|| default_strategy.to_string())),
            engine: self.engine.clone(),
            obs: self.obs.clone(),
            ..RunFile::default()
        };
        Ok(run.scenario(Path::new("."))?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (stage, strategy, engine, obs, out_dir, [hyper]).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Global decision-step budget.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, env = "TANKDEF_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more checkpoint files.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Decision steps per evaluation.
    #[arg(long, default_value_t = DEFAULT_EVAL_STEPS)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Human reference levels (TOML with `novice`, `competent`, `source`).
    #[arg(long)]
    pub human_ref: Option<PathBuf>,
    /// Append the published Table 1 rows as references.
    #[arg(long)]
    pub table1: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long, env = "TANKDEF_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    /// `scripted:<noop|random|base_camper|enemy_chaser>` or `learned`.
    #[arg(long, default_value = "scripted:base_camper")]
    pub policy: String,
    /// Checkpoint for `--policy learned`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub episodes: u32,
    /// Write every decision step's frame as PNG into this directory.
    #[arg(long)]
    pub dump_frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Checkpoint for learned groups; fresh weights when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Decision steps per second.
    #[arg(long, default_value_t = 10.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many decision steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) if m.starts_with("error:") => write!(f, "{}", m.trim_end()),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<A3cError> for CliError {
    fn from(e: A3cError) -> Self {
        match e {
            A3cError::Config(c) => c.into(),
            A3cError::InvalidHyper(_) | A3cError::Mts(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(c) => c.into(),
            EvalError::ArchitectureMismatch(_) | EvalError::Mts(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Config(c) => c.into(),
            ServerError::Mts(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<CheckpointSet, CliError> {
    CheckpointSet::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn banner(what: &str, seed: u64, resolved: &impl serde::Serialize) {
    let json = serde_json::to_string(resolved).unwrap_or_default();
    println!("# tankdef {what} seed={seed} config={json}");
}

fn run_train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::from_run_file(path)?,
        None => TrainConfig {
            scenario: a.scenario.resolve("goal_map_pair")?,
            hyper: Hyperparams::default(),
            out_dir: PathBuf::from("runs"),
        },
    };
    if let Some(s) = a.seed {
        cfg.hyper.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.hyper.workers = w;
    }
    if let Some(s) = a.steps {
        cfg.hyper.total_steps = s;
    }
    if let Some(d) = a.out_dir {
        cfg.out_dir = d;
    }
    cfg.hyper.validate()?;
    banner(
        "train",
        cfg.hyper.seed,
        &serde_json::json!({"hyper": cfg.hyper, "scenario": cfg.scenario, "out_dir": cfg.out_dir}),
    );
    let outcome = train(&cfg)?;
    writeln!(
        out,
        "trained {} steps: {} episodes, {} updates; final checkpoint {}; log {}",
        outcome.final_set.step,
        outcome.episodes,
        outcome.updates,
        outcome.final_path.display(),
        outcome.log_path.display()
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn run_eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let scenario = a.scenario.resolve("goal_map_pair")?;
    let human = match &a.human_ref {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Some(HumanReference::from_toml(&text)?)
        }
        None => None,
    };
    banner(
        "eval",
        a.seed,
        &serde_json::json!({"scenario": scenario, "steps": a.steps, "checkpoints": a.checkpoint}),
    );
    let mut reports: Vec<MilestoneReport> = Vec::new();
    for path in &a.checkpoint {
        let set = load_checkpoint(path)?;
        let r = evaluate(&set, &scenario, a.steps, a.seed)?;
        writeln!(
            out,
            "{}: step {} episodes {} mean_total_reward {:.3} mean_steps_per_episode {:.2}{}",
            path.display(),
            r.milestone_step,
            r.episodes,
            r.mean_total_reward,
            r.mean_steps_per_episode,
            if r.insufficient_data { " (insufficient data)" } else { "" }
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        reports.push(r);
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let (format, name) = match a.format {
        FormatArg::Csv => (ReportFormat::Csv, "report.csv"),
        FormatArg::Json => (ReportFormat::Json, "report.json"),
    };
    let path = a.out_dir.join(name);
    let table1: &[_] = if a.table1 { &TABLE1 } else { &[] };
    export_report(&reports, human.as_ref(), table1, &path, format)?;
    writeln!(out, "report written to {}", path.display()).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn parse_policy(spec: &str) -> Result<Option<ScriptedPolicy>, CliError> {
    if spec == "learned" {
        return Ok(None);
    }
    let name = spec
        .strip_prefix("scripted:")
        .ok_or_else(|| CliError::Usage(format!("--policy must be `learned` or `scripted:<name>`, got {spec:?}")))?;
    name.parse()
        .map(Some)
        .map_err(|_| CliError::Usage(format!("unknown scripted policy {name:?}")))
}

/// Plays `episodes` episodes and returns one summary line each.
pub fn play_episodes(
    scenario: &Scenario,
    source: NetworkSource<'_>,
    seed: u64,
    episodes: u32,
    dump_frames: Option<&Path>,
) -> Result<Vec<String>, CliError> {
    let runtime_err = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());
    let mut rt = scenario.runtime(source, seed)?;
    let mut lines = Vec::new();
    if let Some(dir) = dump_frames {
        std::fs::create_dir_all(dir).map_err(|e| runtime_err(&e))?;
    }
    for ep in 0..episodes {
        let ep_seed = seed.wrapping_add(ep as u64);
        let mut env = scenario.new_env(ep_seed).map_err(|e| runtime_err(&e))?;
        rt.reseed(ep_seed);
        let mut steps = 0u64;
        loop {
            if let Some(dir) = dump_frames {
                env.render()
                    .save_png(&dir.join(format!("ep{ep:03}_step{steps:05}.png")))
                    .map_err(|e| runtime_err(&e))?;
            }
            if env.state().is_terminal() {
                break;
            }
            let obs: BTreeMap<EntityId, ObsTensor> = env
                .state()
                .alive_player_ids()
                .into_iter()
                .filter_map(|id| env.observation(id).map(|o| (id, o)))
                .collect();
            let d = rt.decide(env.state(), &obs).map_err(|e| runtime_err(&e))?;
            env.step(&d.actions).map_err(|e| runtime_err(&e))?;
            steps += 1;
        }
        let s = env.state();
        let scores: Vec<String> = s.agent_scores.iter().map(|(id, v)| format!("{id}:{v}")).collect();
        lines.push(format!(
            "episode {ep} seed {ep_seed}: status {:?} decision_steps {steps} ticks {} reward {} scores [{}] hash {}",
            s.status,
            s.tick,
            s.agent_scores.values().sum::<f64>(),
            scores.join(" "),
            s.state_hash()[..8].iter().map(|b| format!("{b:02x}")).collect::<String>()
        ));
    }
    Ok(lines)
}

fn run_play(a: PlayArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let policy = parse_policy(&a.policy)?;
    let (scenario, ckpt) = match policy {
        Some(p) => {
            let mut sc = a.scenario.resolve("goal_map_pair")?;
            sc.strategy = StrategyConfig::scripted(p);
            sc.validate()?;
            (sc, None)
        }
        None => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Usage("--policy learned needs --checkpoint".into()))?;
            (a.scenario.resolve("goal_map_pair")?, Some(load_checkpoint(path)?))
        }
    };
    banner("play", a.seed, &serde_json::json!({"policy": a.policy, "scenario": scenario}));
    let source = match &ckpt {
        Some(set) => NetworkSource::Registry(set),
        None => NetworkSource::Fresh { seed: a.seed },
    };
    for line in play_episodes(&scenario, source, a.seed, a.episodes, a.dump_frames.as_deref())? {
        writeln!(out, "{line}").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run_serve(a: ServeArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let scenario = a.scenario.resolve("goal_map_pair")?;
    let ckpt = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let source = match &ckpt {
        Some(set) => NetworkSource::Registry(set),
        None => NetworkSource::Fresh { seed: a.seed },
    };
    let cfg = SessionConfig {
        decision_rate: a.rate,
        seed: a.seed,
        ..SessionConfig::default()
    };
    banner("serve", a.seed, &serde_json::json!({"scenario": scenario, "session": cfg}));
    let session = Session::new(scenario, source, cfg)?;
    let handle = serve(
        session,
        ServeConfig {
            addr: format!("{}:{}", a.host, a.port),
            max_steps: a.max_steps,
            ..ServeConfig::default()
        },
    )?;
    writeln!(out, "listening on ws://{}", handle.local_addr).map_err(|e| CliError::Runtime(e.to_string()))?;
    handle.join()?;
    Ok(())
}

/// Parses `argv` and runs the subcommand, writing results to `out`.
pub fn dispatch<I, T>(argv: I, out: &mut dyn std::io::Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Usage(String::new()),
        _ => CliError::Usage(e.render().to_string()),
    })?;
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    match cli.command {
        Command::Train(a) => run_train(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::Play(a) => run_play(a, out),
        Command::Serve(a) => run_serve(a, out),
    }
}

/// Process entry point; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<T> = argv.into_iter().collect();
    // help and version print through clap and succeed
    if let Err(e) = Cli::try_parse_from(argv.clone()) {
        if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) {
            let _ = e.print();
            return 0;
        }
    }
    match dispatch(argv, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
