//! Command-line pipeline: ingest -> render -> train -> encode -> cluster -> backtest -> report.
//!
//! Exit codes: 0 success, 1 other runtime failure (I/O, lock held),
//! 2 config error, 3 missing upstream artifact, 4 data validation failure,
//! 5 numerical failure.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

use crate::autoencoder::AutoencoderError;
use crate::backtest::BacktestError;
use crate::chart_render::RenderError;
use crate::graph_cluster::GraphError;
use crate::market_data::MarketDataError;
use config::{parse_value, ConfigError, PipelineConfig};

pub use commands::{read_metrics, DirLock};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing {path}: run `chartfolio {producer}` first")]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
    #[error("{0} is locked by another command (delete the .lock file if it is stale)")]
    Locked(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Locked(_) => 1,
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        match e {
            MarketDataError::Io { .. } | MarketDataError::Write(_) => CliError::Io(e.to_string()),
            MarketDataError::ZeroParameter { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Config(_) => CliError::Config(e.to_string()),
            RenderError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AutoencoderError> for CliError {
    fn from(e: AutoencoderError) -> Self {
        match e {
            AutoencoderError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            AutoencoderError::Config(_) | AutoencoderError::Architecture(_) => {
                CliError::Config(e.to_string())
            }
            AutoencoderError::Io { .. } => CliError::Io(e.to_string()),
            AutoencoderError::Image(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::NonFinite(_) | GraphError::ZeroVector(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Config(_) => CliError::Config(e.to_string()),
            BacktestError::Graph {
                source: GraphError::NonFinite(_) | GraphError::ZeroVector(_),
                ..
            }
            | BacktestError::InvalidCurve(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "chartfolio",
    version,
    about = "Candlestick-chart embeddings, modularity clustering and portfolio backtests"
)]
pub struct Cli {
    /// Pipeline config file (TOML; dotted keys such as backtest.k2 = 5)
    #[arg(long, global = true, env = "CHARTFOLIO_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override any config key, e.g. --set backtest.k2=3 (repeatable; typed flags win)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw OHLC CSV and write the cleaned copy
    Ingest(IngestArgs),
    /// Render training and formation charts and their manifests
    Render(RenderArgs),
    /// Train the autoencoder on the training charts
    Train(TrainArgs),
    /// Encode the formation charts into the embedding store
    Encode(EncodeArgs),
    /// Cluster every formation date in the embedding store
    Cluster(ClusterArgs),
    /// Run the rolling backtest and write the report CSVs
    Backtest(BacktestArgs),
    /// Print the metrics table and plot the equity curve
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw OHLC CSV (date,symbol,open,high,low,close) [default: data/prices.csv]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Validated CSV to write [default: artifacts/prices.csv]
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Validated price CSV [default: artifacts/prices.csv]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Chart directory [default: artifacts/charts]
    #[arg(long, visible_alias = "out-dir")]
    pub charts: Option<PathBuf>,
    /// Chart width in pixels [default: 224]
    #[arg(long)]
    pub width: Option<u32>,
    /// Chart height in pixels [default: 224]
    #[arg(long)]
    pub height: Option<u32>,
    /// Formation window in trading days [default: 20]
    #[arg(long)]
    pub window: Option<usize>,
    /// Trading days between rebalances [default: 10]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Step between training windows [default: 1]
    #[arg(long)]
    pub train_stride: Option<usize>,
    /// First rebalance date, YYYY-MM-DD [default: none]
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    /// Last date of the backtest, YYYY-MM-DD [default: none]
    #[arg(long)]
    pub end_date: Option<NaiveDate>,
    /// Train on every window, including those after the backtest start [default: false]
    #[arg(long)]
    pub paper_mode: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Chart directory [default: artifacts/charts]
    #[arg(long)]
    pub charts: Option<PathBuf>,
    /// Checkpoint to write [default: artifacts/model.cae]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Architecture preset [default: paper]
    #[arg(long, value_parser = ["paper", "desk"])]
    pub preset: Option<String>,
    /// Training epochs [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial SGD learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Chart directory [default: artifacts/charts]
    #[arg(long)]
    pub charts: Option<PathBuf>,
    /// Trained checkpoint [default: artifacts/model.cae]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embedding store to write [default: artifacts/embeddings.csv]
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Validated price CSV [default: artifacts/prices.csv]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Embedding store [default: artifacts/embeddings.csv]
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Cluster assignments to write [default: artifacts/clusters.csv]
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Formation window in trading days [default: 20]
    #[arg(long)]
    pub window: Option<usize>,
    /// Use raw embeddings instead of removing the cross-sectional mean [default: false]
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Validated price CSV [default: artifacts/prices.csv]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Embedding store [default: artifacts/embeddings.csv]
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report directory [default: report]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Stocks per portfolio [default: 5]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Formation window in trading days [default: 20]
    #[arg(long)]
    pub window: Option<usize>,
    /// Trading days each portfolio is held [default: 10]
    #[arg(long)]
    pub holding_period: Option<usize>,
    /// Trading days between rebalances [default: 10]
    #[arg(long)]
    pub stride: Option<usize>,
    /// First rebalance date, YYYY-MM-DD [default: none]
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    /// Last date of the backtest, YYYY-MM-DD [default: none]
    #[arg(long)]
    pub end_date: Option<NaiveDate>,
    /// Hold cash on dates with fewer than k2 complete windows instead of failing [default: false]
    #[arg(long)]
    pub skip_thin_dates: bool,
    /// Use raw embeddings instead of removing the cross-sectional mean [default: false]
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report directory [default: report]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Benchmark curve CSV (date,value) to plot alongside [default: none]
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlagKind {
    /// Parsed as a TOML value.
    Value,
    /// Always a string (paths, dates).
    Text,
    /// Boolean switch writing this value when present.
    Switch(bool),
}

/// Every typed flag and the config keys it overrides.
pub const FLAGS: &[(&str, &[&str], FlagKind)] = &[
    ("seed", &["seed"], FlagKind::Value),
    ("input", &["paths.input"], FlagKind::Text),
    ("data", &["paths.data"], FlagKind::Text),
    ("charts", &["paths.charts"], FlagKind::Text),
    ("checkpoint", &["paths.checkpoint"], FlagKind::Text),
    ("embeddings", &["paths.embeddings"], FlagKind::Text),
    ("clusters", &["paths.clusters"], FlagKind::Text),
    ("report", &["paths.report"], FlagKind::Text),
    ("benchmark", &["paths.benchmark"], FlagKind::Text),
    ("width", &["render.width"], FlagKind::Value),
    ("height", &["render.height"], FlagKind::Value),
    ("window", &["backtest.formation_window"], FlagKind::Value),
    ("stride", &["backtest.stride"], FlagKind::Value),
    ("holding_period", &["backtest.holding_period"], FlagKind::Value),
    ("k2", &["backtest.k2"], FlagKind::Value),
    ("start_date", &["backtest.start_date"], FlagKind::Text),
    ("end_date", &["backtest.end_date"], FlagKind::Text),
    ("skip_thin_dates", &["backtest.skip_thin_dates"], FlagKind::Switch(true)),
    ("no_center", &["backtest.center_embeddings"], FlagKind::Switch(false)),
    ("train_stride", &["charts.train_stride"], FlagKind::Value),
    ("paper_mode", &["paper_mode"], FlagKind::Switch(true)),
    ("preset", &["preset"], FlagKind::Text),
    ("epochs", &["train.max_epochs"], FlagKind::Value),
    ("batch_size", &["train.batch_size"], FlagKind::Value),
    ("learning_rate", &["train.learning_rate"], FlagKind::Value),
];

/// Config overrides from `--set` pairs followed by typed flags.
fn overrides(top: &ArgMatches, sub: &ArgMatches) -> Result<Vec<(String, toml::Value)>, CliError> {
    let mut out = Vec::new();
    for kv in top.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        out.push((k.trim().to_string(), parse_value(v.trim())));
    }
    for (id, keys, kind) in FLAGS {
        let value = match kind {
            FlagKind::Switch(v) => match sub.try_get_one::<bool>(id) {
                Ok(Some(true)) => toml::Value::Boolean(*v),
                _ => continue,
            },
            _ => {
                let m = if *id == "seed" { top } else { sub };
                let Ok(Some(mut raw)) = m.try_get_raw(id) else {
                    continue;
                };
                let Some(text) = raw.next().and_then(|s| s.to_str()) else {
                    return Err(CliError::Config(format!("--{id}: not valid UTF-8")));
                };
                if *kind == FlagKind::Text {
                    toml::Value::String(text.to_string())
                } else {
                    parse_value(text)
                }
            }
        };
        for k in *keys {
            out.push((k.to_string(), value.clone()));
        }
    }
    Ok(out)
}

/// Parses `args` (including the program name) and runs one command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use clap::error::ErrorKind;
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.render().to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Config(e.to_string()))?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let overrides = overrides(&matches, sub)?;
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    commands::dispatch(&cli.command, &cfg)
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string();
            eprintln!("error: {}", text.trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every long flag of every subcommand documents its default, and that
    /// default equals the pipeline default.
    #[test]
    fn help_defaults_match_config_defaults() {
        let defaults = PipelineConfig::default();
        let cmd = Cli::command();
        let mut seen = 0;
        let mut check = |arg: &clap::Arg| {
            let id = arg.get_id().as_str();
            if matches!(id, "config" | "set" | "help" | "version") {
                return;
            }
            let (_, keys, kind) = FLAGS
                .iter()
                .find(|(f, _, _)| *f == id)
                .unwrap_or_else(|| panic!("--{id} has no config key"));
            let help = arg.get_help().expect("documented").to_string();
            let shown = help
                .rsplit_once("[default: ")
                .and_then(|(_, d)| d.strip_suffix(']'))
                .unwrap_or_else(|| panic!("--{id} help lacks a default: {help}"));
            for key in *keys {
                let actual = defaults.value_at(key);
                match (kind, actual) {
                    (FlagKind::Switch(on), Some(toml::Value::Boolean(b))) => {
                        assert_eq!(shown, "false", "--{id}");
                        assert_eq!(b, !on, "--{id}");
                    }
                    (_, None) => assert_eq!(shown, "none", "--{id}"),
                    (_, Some(toml::Value::String(s))) => assert_eq!(shown, s, "--{id}"),
                    (_, Some(v)) => assert_eq!(parse_value(shown), v, "--{id}"),
                }
            }
            seen += 1;
        };
        for a in cmd.get_arguments() {
            check(a);
        }
        for sub in cmd.get_subcommands() {
            for a in sub.get_arguments() {
                check(a);
            }
        }
        assert!(seen > 30);
    }

    #[test]
    fn flags_override_set_and_file() {
        let m = Cli::command()
            .try_get_matches_from([
                "chartfolio", "--set", "backtest.k2=2", "backtest", "--k2", "3", "--no-center",
                "--start-date", "2021-01-04",
            ])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let o = overrides(&m, sub).unwrap();
        let cfg = PipelineConfig::load(None, &o).unwrap();
        assert_eq!(cfg.backtest.k2, 3);
        assert!(!cfg.backtest.center_embeddings);
        assert_eq!(cfg.backtest.start_date, NaiveDate::from_ymd_opt(2021, 1, 4));
    }

    #[test]
    fn exit_codes() {
        let e = run(["chartfolio", "backtest", "--k2", "zero"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run(["chartfolio", "--set", "nonsense", "report"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run(["chartfolio", "--set", "backtest.k2=0", "report"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
