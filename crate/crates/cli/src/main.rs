//! `extractbench`: generate corpora, serve the victim, select, extract,
//! evaluate and sweep.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use extractbench::selection::SelectionMethod;

use crate::config::{RunConfig, Storage};

/// A configuration problem detected before any work starts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "extractbench", version, about = "Model extraction bench for representation APIs")]
struct Cli {
    /// JSON run configuration; defaults to `<run-dir>/config.json` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus_seed: Option<u64>,
    #[arg(long, global = true)]
    victim_seed: Option<u64>,
    #[arg(long, global = true)]
    attack_seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate, preprocess and split the synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Serve the victim until SIGINT or SIGTERM.
    ServeVictim(ServeArgs),
    /// Choose clips under the query budget.
    Select(SelectArgs),
    /// Query the victim for the planned clips and train the heads.
    Extract(ExtractArgs),
    /// Score the checkpoint on the eval split.
    Evaluate(EvaluateArgs),
    /// Run select, extract and evaluate over a method × budget grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    speakers: Option<u32>,
    #[arg(long)]
    clips_per_speaker: Option<u32>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long, value_parser = parse_storage)]
    storage: Option<Storage>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Victim weight seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long)]
    bind: Option<String>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    layers_allowed: Option<Vec<usize>>,
    /// Accepted requests are written here on shutdown.
    #[arg(long)]
    ledger_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long, value_parser = parse_method)]
    method: Option<SelectionMethod>,
    /// Query budget H in seconds.
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Victim service base URL.
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Compute per-clip gradients on all cores.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    probe_layer: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<SelectionMethod>>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
    /// Offsets added to the attack seed, one run each.
    #[arg(long, value_delimiter = ',')]
    seed_offsets: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    parallel: bool,
}

fn parse_method(s: &str) -> Result<SelectionMethod, String> {
    s.parse().map_err(|e: extractbench::Error| e.to_string())
}

fn parse_storage(s: &str) -> Result<Storage, String> {
    match s {
        "wav" => Ok(Storage::Wav),
        "inline" => Ok(Storage::Inline),
        _ => Err(format!("unknown storage {s:?} (expected wav or inline)")),
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.run_dir) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(dir)) if dir.join("config.json").exists() => RunConfig::load(&dir.join("config.json"))?,
        _ => RunConfig::default(),
    };
    if let Some(dir) = &cli.run_dir {
        cfg.run_dir = dir.clone();
    }
    if let Some(s) = cli.corpus_seed {
        cfg.seeds.corpus = s;
    }
    if let Some(s) = cli.victim_seed {
        cfg.seeds.victim = s;
    }
    if let Some(s) = cli.attack_seed {
        cfg.seeds.attack = s;
    }
    match &cli.command {
        Command::GenCorpus(a) => {
            set(&mut cfg.corpus.speakers, a.speakers);
            set(&mut cfg.corpus.clips_per_speaker, a.clips_per_speaker);
            set(&mut cfg.corpus.eval_fraction, a.eval_fraction);
            set(&mut cfg.corpus.storage, a.storage);
        }
        Command::ServeVictim(a) => {
            set(&mut cfg.seeds.victim, a.seed);
            set(&mut cfg.victim.budget_s, a.budget_seconds);
            set(&mut cfg.victim.bind, a.bind.clone());
            set(&mut cfg.victim.allowed_layers, a.layers_allowed.clone());
        }
        Command::Select(a) => {
            set(&mut cfg.selection.method, a.method);
            set(&mut cfg.selection.budget_s, a.budget_seconds);
            set(&mut cfg.selection.k, a.k);
        }
        Command::Extract(a) => {
            set(&mut cfg.victim.url, a.url.clone());
            cfg.extraction.steps = a.steps.or(cfg.extraction.steps);
            cfg.extraction.parallel |= a.parallel;
        }
        Command::Evaluate(a) => {
            cfg.evaluation.probe_layer = a.probe_layer.or(cfg.evaluation.probe_layer);
        }
        Command::Sweep(a) => {
            set(&mut cfg.sweep.methods, a.methods.clone());
            set(&mut cfg.sweep.budgets_s, a.budgets.clone());
            set(&mut cfg.sweep.seed_offsets, a.seed_offsets.clone());
            cfg.extraction.steps = a.steps.or(cfg.extraction.steps);
            cfg.extraction.parallel |= a.parallel;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// 2 usage, 3 budget exhausted, 4 I/O and data, 5 numeric.
fn exit_code(err: &anyhow::Error) -> u8 {
    use extractbench::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parameter(_) => 2,
                E::BudgetExhausted => 3,
                E::Numeric(_) => 5,
                _ => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    4
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = resolve_config(&cli).and_then(|cfg| match cli.command {
        Command::GenCorpus(_) => commands::gen_corpus(&cfg),
        Command::ServeVictim(a) => commands::serve_victim(&cfg, a.ledger_log.as_deref()),
        Command::Select(_) => commands::select(&cfg),
        Command::Extract(_) => commands::extract(&cfg),
        Command::Evaluate(_) => commands::evaluate(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
