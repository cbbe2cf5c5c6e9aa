use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use umbr::analysis::{Normalization, Variant};
use umbr::decode::Strategy;
use umbr::mbr::Estimator;
use umbr::pipeline::{run_pipeline, RunConfig, ScoreKindName, Task};
use umbr::utility::UtilitySpec;
use umbr::{Error, Result};

/// Uncertainty-aware MBR decoding toolchain.
///
/// Worker threads default to all cores; the UMBR_THREADS environment variable
/// caps them. Exit codes: 0 success, 2 configuration error, 3 data error,
/// 4 refusal.
#[derive(Parser, Debug)]
#[command(name = "umbr", version)]
struct Cli {
    #[command(subcommand)]
    task: Command,

    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// single | concat | per-model-full | per-model-blocked | token-ensemble | numeric
    #[arg(long, global = true)]
    estimator: Option<Estimator>,
    /// bleu | chrf | token-f1 | exact-match
    #[arg(long, global = true)]
    utility: Option<UtilitySpec>,
    /// Number of ensemble members sampled from the posterior.
    #[arg(long = "models", global = true)]
    models: Option<usize>,
    /// Hypotheses per member.
    #[arg(long, global = true)]
    per_model_h: Option<usize>,
    /// Posterior effective sample size (inverse temperature).
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// ancestral | beam | greedy
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    #[arg(long, global = true)]
    max_len: Option<usize>,
    #[arg(long, global = true)]
    length_penalty: Option<f64>,
    #[arg(long, global = true)]
    sampling_temperature: Option<f64>,
    /// Score each per-model copy of a string separately in the blocked estimator.
    #[arg(long, global = true)]
    no_merge_duplicates: bool,
    /// Number of empty-prompt inputs when no prompt file is given.
    #[arg(long, global = true)]
    num_inputs: Option<usize>,
    /// tok | seq
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// count-normalized | raw-sum
    #[arg(long, global = true)]
    normalization: Option<Normalization>,
    /// s_star | s_bar
    #[arg(long, global = true)]
    score: Option<ScoreKindName>,
    /// Coverage levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Longest sequence the oracle enumerates.
    #[arg(long, global = true)]
    oracle_max_len: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Hypothesis JSONL to ensemble (black-box input).
    #[arg(long, global = true)]
    hypotheses: Option<PathBuf>,
    /// Vocabulary JSON pinning the hypothesis tokens.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    references: Option<PathBuf>,
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    #[arg(long, global = true)]
    posterior: Option<PathBuf>,
    /// Fixed member model file; repeat for a deep ensemble.
    #[arg(long = "model", global = true)]
    model_files: Vec<PathBuf>,
    /// System outputs JSONL for `evaluate`.
    #[arg(long, global = true)]
    outputs: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample ensemble members and decode hypothesis sets to JSONL.
    Generate,
    /// Choose one output per input with an MBR estimator.
    Mbr,
    /// Risk scores and risk-coverage curve against references.
    Selective,
    /// Self-BLEU diversity of the members' greedy outputs.
    Diversity,
    /// Exact sequence- and token-level posteriors over a small space.
    Oracle,
    /// Corpus BLEU and chrF of outputs against references.
    Evaluate,
    /// Comparison counts and effective beam sizes per estimator.
    Budget,
}

impl From<Command> for Task {
    fn from(c: Command) -> Self {
        match c {
            Command::Generate => Task::Generate,
            Command::Mbr => Task::Mbr,
            Command::Selective => Task::Selective,
            Command::Diversity => Task::Diversity,
            Command::Oracle => Task::Oracle,
            Command::Evaluate => Task::Evaluate,
            Command::Budget => Task::Budget,
        }
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("UMBR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("UMBR_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn build_config(cli: Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.task = cli.task.into();
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = cli.$flag { $field = v; })*
        };
    }
    set! {
        seed => cfg.seed,
        estimator => cfg.estimator,
        utility => cfg.utility,
        models => cfg.models,
        per_model_h => cfg.per_model_h,
        strategy => cfg.decode.strategy,
        max_len => cfg.decode.max_len,
        length_penalty => cfg.decode.length_penalty,
        sampling_temperature => cfg.decode.sampling_temperature,
        num_inputs => cfg.num_inputs,
        variant => cfg.risk_variant,
        normalization => cfg.normalization,
        score => cfg.score,
        alphas => cfg.alphas,
        oracle_max_len => cfg.oracle_max_len,
    }
    if cli.lambda.is_some() {
        cfg.lambda = cli.lambda;
    }
    if cli.no_merge_duplicates {
        cfg.merge_duplicates = false;
    }
    let p = &mut cfg.paths;
    for (flag, field) in [
        (cli.hypotheses, &mut p.hypotheses),
        (cli.vocab, &mut p.vocab),
        (cli.references, &mut p.references),
        (cli.prompts, &mut p.prompts),
        (cli.posterior, &mut p.posterior),
        (cli.outputs, &mut p.outputs),
    ] {
        if flag.is_some() {
            *field = flag;
        }
    }
    if !cli.model_files.is_empty() {
        p.models = cli.model_files;
    }
    p.out_dir = cli.out_dir;
    let requested = cli.threads.or(cfg.threads);
    cfg.threads = match (requested, thread_cap()?) {
        (Some(n), Some(cap)) => Some(n.min(cap)),
        (Some(n), None) => Some(n),
        (None, cap) => cap,
    };
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build_config(cli).and_then(|cfg| run_pipeline(&cfg));
    match result {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("umbr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
