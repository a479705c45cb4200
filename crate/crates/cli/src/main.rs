//! `geohead`: ingest tweets, train heads, evaluate, predict and locate users.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use geohead::features::FeatureSet;
use geohead::gmm::CovActivation;
use geohead::head::HeadKind;
use geohead::loss::LossCombination;
use geohead::metrics::CovAggregation;

use config::{parse_feature_list, FileConfig, FlagValues, GroupBy, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "geohead", version, about = "Geolocation prediction heads for tweet embeddings")]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SharedArgs {
    /// Seed for initialization, shuffling and Monte Carlo metrics.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with defaults for any of these options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for relative input and output paths.
    #[arg(long, global = true, env = "GEOHEAD_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    embedding_dim: Option<usize>,
    /// Head kind: gsop, gmop, psop or pmop.
    #[arg(long, global = true)]
    kind: Option<HeadKind>,
    /// Number of predicted outcomes M.
    #[arg(long, global = true)]
    outcomes: Option<usize>,
    /// Key feature set.
    #[arg(long, global = true)]
    kf: Option<FeatureSet>,
    /// Comma-separated minor feature sets, or "none".
    #[arg(long, global = true)]
    mf: Option<String>,
    /// Feature set used at evaluation and prediction time.
    #[arg(long, global = true)]
    vf: Option<FeatureSet>,
    /// Confidence level for PRA and COV.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Locations returned per user.
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true, value_enum)]
    group_by: Option<GroupBy>,
    /// Directory for CSV plot data.
    #[arg(long, global = true)]
    plot: Option<PathBuf>,
    /// Count coverage with D/σ ≤ q instead of D²/σ ≤ q.
    #[arg(long, global = true)]
    strict_paper_cov: bool,
    /// Coverage aggregation over peaks: weighted or any_peak.
    #[arg(long, global = true, value_parser = parse_cov_aggregation)]
    cov_aggregation: Option<CovAggregation>,
    /// Monte Carlo samples per peak for CAE.
    #[arg(long, global = true)]
    cae_samples: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    /// Covariance activation: lower_bounded or unlimited.
    #[arg(long, value_parser = parse_cov_activation)]
    covariance_activation: Option<CovActivation>,
    /// Loss combination: average, sum or prob_only.
    #[arg(long, value_parser = parse_loss_combination)]
    loss_combination: Option<LossCombination>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean tweet JSONL, drop bots and optionally export stub embeddings.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep records without labels.
        #[arg(long)]
        allow_unlabeled: bool,
        /// Skip the bot filter.
        #[arg(long)]
        keep_bots: bool,
        /// Write key-feature embeddings from the hashing encoder here.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train a head and write a checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-step loss CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Precomputed key-feature embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Precomputed minor-feature embeddings, one file per minor feature.
        #[arg(long)]
        minor_embeddings: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint on labeled tweets.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Predict locations for tweets (JSONL) or raw text lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input file; each line is a tweet object or raw text.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Raw text to predict; repeatable.
        #[arg(long)]
        text: Vec<String>,
        /// Prediction JSONL destination; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Estimate per-user locations from tweet predictions.
    UserLocate {
        /// Prediction JSONL, or tweet JSONL when --checkpoint is given.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
}

fn parse_serde_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_ascii_lowercase().replace('-', "_")))
        .map_err(|e| e.to_string())
}

fn parse_cov_aggregation(s: &str) -> Result<CovAggregation, String> {
    parse_serde_enum(s)
}

fn parse_cov_activation(s: &str) -> Result<CovActivation, String> {
    parse_serde_enum(s)
}

fn parse_loss_combination(s: &str) -> Result<LossCombination, String> {
    parse_serde_enum(s)
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::UserLocate { .. } => "user-locate",
        }
    }
}

fn flag_values(shared: &SharedArgs, train: Option<&TrainArgs>) -> Result<FlagValues, CliError> {
    let mf = shared.mf.as_deref().map(parse_feature_list).transpose().map_err(|e| CliError::Usage(format!("--mf: {e}")))?;
    Ok(FlagValues {
        seed: shared.seed,
        embedding_dim: shared.embedding_dim,
        kind: shared.kind,
        outcomes: shared.outcomes,
        kf: shared.kf,
        mf,
        vf: shared.vf,
        alpha: shared.alpha,
        top_k: shared.top_k,
        group_by: shared.group_by,
        strict_paper_cov: shared.strict_paper_cov,
        cov_aggregation: shared.cov_aggregation,
        cae_samples: shared.cae_samples,
        epochs: train.and_then(|t| t.epochs),
        batch_size: train.and_then(|t| t.batch_size),
        lr_max: train.and_then(|t| t.lr_max),
        lr_min: train.and_then(|t| t.lr_min),
        dev_fraction: train.and_then(|t| t.dev_fraction),
        covariance_activation: train.and_then(|t| t.covariance_activation),
        loss_combination: train.and_then(|t| t.loss_combination),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let data_dir = cli.shared.data_dir.clone();
    let file = match &cli.shared.config {
        Some(p) => FileConfig::load(&config::resolve_path(data_dir.as_deref(), p))?,
        None => FileConfig::default(),
    };
    let train_args = match &cli.command {
        Command::Train { train, .. } => Some(train),
        _ => None,
    };
    let mut cfg = RunConfig::resolve(cli.command.name(), flag_values(&cli.shared, train_args)?, file)?;
    let path = |p: &PathBuf| config::resolve_path(data_dir.as_deref(), p);
    let plot = cli.shared.plot.as_ref().map(path);
    if let Some(p) = &plot {
        cfg.record_path("plot", p);
    }

    match cli.command {
        Command::Ingest { input, output, allow_unlabeled, keep_bots, embeddings } => commands::ingest(
            &mut cfg,
            commands::IngestPaths { input: path(&input), output: path(&output), embeddings: embeddings.as_ref().map(path) },
            allow_unlabeled,
            keep_bots,
        ),
        Command::Train { input, checkpoint, loss_log, embeddings, minor_embeddings, .. } => commands::train(
            &mut cfg,
            commands::TrainPaths {
                input: path(&input),
                checkpoint: path(&checkpoint),
                loss_log: loss_log.as_ref().map(path),
                embeddings: embeddings.as_ref().map(path),
                minor_embeddings: minor_embeddings.iter().map(path).collect(),
            },
        ),
        Command::Evaluate { input, checkpoint, output, embeddings } => commands::evaluate(
            &mut cfg,
            &path(&input),
            &path(&checkpoint),
            output.as_ref().map(path).as_deref(),
            embeddings.as_ref().map(path).as_deref(),
        ),
        Command::Predict { checkpoint, input, text, output, embeddings } => commands::predict(
            &mut cfg,
            &path(&checkpoint),
            input.as_ref().map(path).as_deref(),
            &text,
            output.as_ref().map(path).as_deref(),
            embeddings.as_ref().map(path).as_deref(),
            plot.as_deref(),
        ),
        Command::UserLocate { input, checkpoint, output, embeddings } => commands::user_locate(
            &mut cfg,
            &path(&input),
            checkpoint.as_ref().map(path).as_deref(),
            output.as_ref().map(path).as_deref(),
            embeddings.as_ref().map(path).as_deref(),
            plot.as_deref(),
        ),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
