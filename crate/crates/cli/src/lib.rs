//! The `colav` command line: training runs, evaluation, scenario files
//! and explanation traces.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use colav::agent::{self, Checkpoint, TrainEvent, METRICS_COLUMNS};
use colav::explain::{explain_episode, IntentionAction, TraceFormat};
use colav::scenario::Scenario;

pub use config::{RunConfig, OUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "colav", version, about = "Train and explain a ship collision-avoidance agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write checkpoints and metrics.
    Train(TrainArgs),
    /// Roll out a checkpoint's greedy policy on fixed-seed scenarios.
    Eval(EvalArgs),
    /// Generate or print scenario files.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Write a per-step explanation trace for one scenario.
    Explain(ExplainArgs),
    /// Configuration helpers.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the environment variable and the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of environment steps.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fix the number of other ships instead of drawing it.
    #[arg(long)]
    pub n_ships: Option<usize>,
    /// Per-episode CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Draw a scenario and write it as JSON.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n_ships: Option<usize>,
        /// Run configuration providing the scenario ranges.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a scenario file and print it.
    Show { path: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntentionArg {
    Taken,
    Straight,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    pub format: FormatArg,
    /// Action at which the collision-avoidance values behind intention are read.
    #[arg(long, value_enum, default_value_t = IntentionArg::Taken)]
    pub intention_at: IntentionArg,
}

#[derive(Debug, Subcommand)]
pub enum ConfigCmd {
    /// Print the default run configuration.
    Defaults,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input files.
    Usage(anyhow::Error),
    /// Something went wrong while running.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.code()
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Scenario(c) => cmd_scenario(&c),
        Command::Explain(a) => cmd_explain(&a),
        Command::Config(ConfigCmd::Defaults) => {
            emit(&(RunConfig::default().to_json() + "\n"));
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (`colav ... | head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .map_err(usage)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(runtime)?;
    }
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

/// Path of the checkpoint written after `step` environment steps.
pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:09}.json"))
}

/// Path of the final checkpoint of a run.
pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.json")
}

pub fn cmd_train(a: &TrainArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.train.learning_steps = n;
    }
    cfg.validate().map_err(usage)?;
    let out = cfg.resolve_out_dir(a.out.as_deref());
    cfg.out_dir = Some(out.clone());
    let hash = cfg.hash();

    fs::create_dir_all(out.join("checkpoints"))
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(runtime)?;
    write_file(&out.join("config.resolved.json"), &cfg.to_json())?;

    let metrics_path = out.join("metrics.csv");
    let file = File::create(&metrics_path)
        .with_context(|| format!("cannot write {}", metrics_path.display()))
        .map_err(runtime)?;
    let mut metrics = BufWriter::new(file);
    let io = |e| colav::Error::io(&metrics_path, e);
    writeln!(metrics, "# config_hash={hash} seed={}", cfg.seed).map_err(|e| runtime(io(e)))?;
    writeln!(metrics, "{}", METRICS_COLUMNS.join(",")).map_err(|e| runtime(io(e)))?;

    let outcome = agent::train(&cfg.train, &cfg.env, cfg.seed, &mut |ev| {
        match ev {
            TrainEvent::Episode(m) => writeln!(metrics, "{}", m.csv_row()).map_err(io)?,
            TrainEvent::Checkpoint { env_step, agent } => {
                let ck = Checkpoint::from_agent(agent, &cfg.train, &cfg.env, cfg.seed, &hash, env_step);
                ck.save(&checkpoint_path(&out, env_step))?;
            }
        }
        Ok(())
    })
    .map_err(runtime)?;
    metrics.flush().map_err(|e| runtime(io(e)))?;

    let ck = Checkpoint::from_agent(&outcome.agent, &cfg.train, &cfg.env, cfg.seed, &hash, outcome.env_steps);
    let final_path = final_checkpoint_path(&out);
    ck.save(&final_path).map_err(runtime)?;
    eprintln!(
        "trained {} env steps, {} updates; checkpoint {}",
        outcome.env_steps,
        outcome.updates,
        final_path.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let actor = ck.actor().map_err(usage)?;
    if let Some(n) = a.n_ships {
        let [lo, hi] = ck.env.scenario.n_ships_range;
        if n < lo || n > hi {
            eprintln!("warning: {n} ships is outside the trained range {lo} to {hi}");
        }
    }
    let report = agent::evaluate(&actor, &ck.env, a.episodes, a.seed, a.n_ships).map_err(runtime)?;
    if let Some(path) = &a.out {
        let mut s = format!(
            "# config_hash={} seed={} eval_seed={}\n",
            ck.config_hash, ck.rng_seed, a.seed
        );
        s.push_str("episode,scenario_seed,n_ships,episode_return,invasion_events,max_cr\n");
        for e in &report.episodes {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.episode, e.scenario_seed, e.n_ships, e.episode_return, e.invasion_events, e.max_cr
            ));
        }
        write_file(path, &s)?;
    }
    emit(&(serde_json::to_string_pretty(&report.summary).map_err(runtime)? + "\n"));
    Ok(())
}

pub fn cmd_scenario(c: &ScenarioCmd) -> CmdResult {
    match c {
        ScenarioCmd::Gen {
            seed,
            n_ships,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let sc = match n_ships {
                Some(n) => {
                    let [lo, hi] = cfg.env.scenario.n_ships_range;
                    if *n < lo || *n > hi {
                        eprintln!("warning: {n} ships is outside the configured range {lo} to {hi}");
                    }
                    Scenario::generate_with_count(*seed, &cfg.env.scenario, *n)
                }
                None => Scenario::generate(*seed, &cfg.env.scenario),
            };
            let text = sc.to_json().map_err(runtime)? + "\n";
            match out {
                Some(p) => write_file(p, &text),
                None => {
                    emit(&text);
                    Ok(())
                }
            }
        }
        ScenarioCmd::Show { path } => {
            let sc = read_scenario(path)?;
            emit(&(sc.to_json().map_err(runtime)? + "\n"));
            Ok(())
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario {}", path.display()))
        .map_err(usage)?;
    Scenario::from_json(&text)
        .with_context(|| format!("cannot parse scenario {}", path.display()))
        .map_err(usage)
}

pub fn cmd_explain(a: &ExplainArgs) -> CmdResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let sc = read_scenario(&a.scenario)?;
    let at = match a.intention_at {
        IntentionArg::Taken => IntentionAction::Taken,
        IntentionArg::Straight => IntentionAction::Straight,
    };
    let trace = explain_episode(&ck, &sc, at).map_err(runtime)?;
    for n in &trace.header.notes {
        eprintln!("note: {n}");
    }
    let format = match a.format {
        FormatArg::Jsonl => TraceFormat::Jsonl,
        FormatArg::Csv => TraceFormat::Csv,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(anyhow!("cannot create {}: {e}", dir.display())))?;
    }
    trace.export(&a.out, format).map_err(runtime)
}
