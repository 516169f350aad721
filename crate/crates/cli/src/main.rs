//! `entrep prepare | train | query`.
//!
//! Every flag can also come from a TOML file given with `--config`: keys
//! are the flag names without dashes, grouped in `[prepare]`, `[train]` and
//! `[query]` tables, plus a top-level `seed` shared by prepare and train.
//! Flags on the command line win over the file.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use entrep::extraction::ExtractionConfig;
use entrep::models::ModelKind;
use entrep::pipeline::{self, PipelineError, PrepareConfig, QueryConfig, TrainConfig, Weighting};
use entrep::ranking::Metric;
use entrep::vocabulary::{FilterConfig, Token};

#[derive(Parser, Debug)]
#[command(name = "entrep", version, about = "Learn entity representations from text and rank entities for queries")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary, extract training instances and package a dataset.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Rank entities for a query file and write a TREC run file.
    Query(QueryArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// TOML file with default values for these flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Corpus: one `doc_id<TAB>text` line per document.
    #[arg(long, value_parser = existing_file)]
    input: PathBuf,
    /// Associations: one `doc_id<TAB>entity_name` line per pair.
    #[arg(long, value_parser = existing_file)]
    assoc: PathBuf,
    /// Dataset directory to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_token_length: usize,
    /// Minimum collection frequency.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Drop tokens found in more than this fraction of documents.
    #[arg(long, default_value_t = 1.0)]
    max_df: f64,
    #[arg(long)]
    max_vocab: Option<usize>,
    /// File with one stopword per line.
    #[arg(long, value_parser = existing_file)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    window_size: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Pad documents shorter than a window (default).
    #[arg(long, overrides_with = "no_pad")]
    pad: bool,
    #[arg(long, overrides_with = "pad")]
    no_pad: bool,
    #[arg(long, value_enum, default_value_t = WeightingArg::None)]
    weighting: WeightingArg,
    /// Resample every entity to N instances (default: the largest count).
    #[arg(long, value_name = "N", num_args = 0..=1)]
    resample: Option<Option<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dataset directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// Model directory to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::LogLinear)]
    model: ModelArg,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Negative samples per instance (vector_space only).
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Expected window size; must match the dataset.
    #[arg(long)]
    window_size: Option<usize>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Queries: one `query_id<TAB>text` line per query.
    #[arg(long, value_parser = existing_file)]
    queries: PathBuf,
    /// Run file to write.
    #[arg(long)]
    output: PathBuf,
    /// Entities per query.
    #[arg(long, default_value_t = 100, value_parser = positive_k)]
    k: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::InnerProduct)]
    metric: MetricArg,
    #[arg(long, default_value = "entrep")]
    run_id: String,
    /// Score every entity even when a k-NN index could be used.
    #[arg(long)]
    force_exhaustive: bool,
    /// Also write every representation as NPY plus labels into DIR.
    #[arg(long, value_name = "DIR")]
    export_representations: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightingArg {
    None,
    Reciprocal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    #[value(name = "log_linear")]
    LogLinear,
    #[value(name = "vector_space")]
    VectorSpace,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    #[value(name = "inner_product")]
    InnerProduct,
    Cosine,
    Euclidean,
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let path = PathBuf::from(s);
    if path.is_file() {
        Ok(path)
    } else {
        Err(format!("file not found: {s}"))
    }
}

fn positive_k(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("k must be ≥ 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

/// Turns the config file's entries for `subcommand` into flags.
fn config_args(path: &Path, subcommand: &str) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    let mut entries: Vec<(String, toml::Value)> = Vec::new();
    for (key, value) in &table {
        match (key.as_str(), value) {
            ("prepare" | "train" | "query", toml::Value::Table(section)) => {
                if key == subcommand {
                    entries.extend(section.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
            }
            ("seed", _) => {
                if subcommand != "query" {
                    entries.push((key.clone(), value.clone()));
                }
            }
            _ => return Err(format!("{}: unknown key {key:?}", path.display())),
        }
    }
    let mut args = Vec::new();
    for (key, value) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => args.push(flag.into()),
            toml::Value::Boolean(false) if key == "pad" => args.push("--no-pad".into()),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => args.extend([flag.into(), s.into()]),
            toml::Value::Integer(i) => args.extend([flag.into(), i.to_string().into()]),
            toml::Value::Float(f) => args.extend([flag.into(), f.to_string().into()]),
            other => return Err(format!("{}: unsupported value for {key:?}: {other}", path.display())),
        }
    }
    Ok(args)
}

/// Inserts config-file flags right after the subcommand so that flags
/// given by the user come later and take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(sub_pos) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        return Ok(args);
    };
    let subcommand = args[sub_pos].to_string_lossy().into_owned();
    let mut config = None;
    for (i, arg) in args.iter().enumerate().skip(sub_pos + 1) {
        let arg = arg.to_string_lossy();
        if arg == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
        }
    }
    let Some(config) = config else {
        return Ok(args);
    };
    let injected = config_args(&config, &subcommand)?;
    let mut out = args[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_pos + 1..]);
    Ok(out)
}

fn read_stopwords(path: &Path) -> Result<BTreeSet<String>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .filter_map(Token::normalize)
        .map(|t| t.as_str().to_string())
        .collect())
}

fn run_prepare(args: PrepareArgs) -> Result<(), PipelineError> {
    let stopwords = args.stopwords.as_deref().map(read_stopwords).transpose()?;
    let config = PrepareConfig {
        filter: FilterConfig {
            min_token_length: args.min_token_length,
            min_collection_frequency: args.min_count,
            max_document_frequency_fraction: args.max_df,
            max_vocabulary_size: args.max_vocab,
            stopwords,
        },
        extraction: ExtractionConfig {
            window_size: args.window_size,
            stride: args.stride,
            skip: args.skip,
            pad_short_documents: !args.no_pad,
        },
        weighting: match args.weighting {
            WeightingArg::None => Weighting::None,
            WeightingArg::Reciprocal => Weighting::Reciprocal,
        },
        resample: args.resample.is_some(),
        resample_target: args.resample.flatten(),
        seed: args.seed,
    };
    let (_, summary) = pipeline::prepare(&args.input, &args.assoc, &args.output, &config)?;
    for line in summary.key_values() {
        println!("{line}");
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), PipelineError> {
    let config = TrainConfig {
        kind: match args.model {
            ModelArg::LogLinear => ModelKind::LogLinear,
            ModelArg::VectorSpace => ModelKind::VectorSpace,
        },
        embedding_dim: args.dim,
        batch_size: args.batch_size,
        epochs: args.epochs,
        learning_rate: args.lr,
        negatives: args.negatives,
        init_scale: args.init_scale,
        seed: args.seed,
        window_size: args.window_size,
    };
    let losses = pipeline::train_stage(&args.data, &args.output, &config)?;
    for (i, loss) in losses.iter().enumerate() {
        println!("epoch={} loss={loss}", i + 1);
    }
    Ok(())
}

fn run_query(args: QueryArgs) -> Result<(), PipelineError> {
    let config = QueryConfig {
        k: args.k,
        metric: match args.metric {
            MetricArg::InnerProduct => Metric::InnerProduct,
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
        },
        run_id: args.run_id,
        force_exhaustive: args.force_exhaustive,
        export_representations: args.export_representations,
    };
    let summary = pipeline::query_stage(&args.model, &args.queries, &args.output, &config)?;
    for diagnostic in &summary.diagnostics {
        eprintln!("warning: {diagnostic}");
    }
    for line in summary.key_values() {
        println!("{line}");
    }
    Ok(())
}

/// Prints a clap error followed by the usage line, which clap leaves out for
/// some error kinds, and exits with status 2.
fn usage_exit(e: clap::Error, subcommand: Option<&str>) -> ! {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        e.exit();
    }
    let message = e.render().to_string();
    eprint!("{message}");
    if !message.contains("Usage:") {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = match subcommand.and_then(|name| cmd.find_subcommand_mut(name)) {
            Some(sub) => sub.render_usage(),
            None => cmd.render_usage(),
        };
        eprintln!("\n{usage}");
    }
    std::process::exit(2);
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let subcommand = raw.get(1).map(|a| a.to_string_lossy().into_owned());
    let subcommand = subcommand.as_deref();
    let args = match expand_config(raw) {
        Ok(args) => args,
        Err(message) => usage_exit(Cli::command().error(ErrorKind::Io, message), subcommand),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => usage_exit(e, subcommand),
    };
    if let Command::Prepare(p) = &cli.command {
        if matches!(p.weighting, WeightingArg::Reciprocal) && p.resample.is_some() {
            usage_exit(Cli::command().error(
                ErrorKind::ArgumentConflict,
                "--weighting reciprocal and --resample are mutually exclusive",
            ), subcommand);
        }
    }
    let result = match cli.command {
        Command::Prepare(args) => run_prepare(args),
        Command::Train(args) => run_train(args),
        Command::Query(args) => run_query(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage_error() { 2 } else { 1 })
        }
    }
}
