use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "fme", version, about = "Functional regression with banded measurement error in the covariate")]
struct Cli {
    /// JSON file with default values for the subcommand's options. Either a
    /// flat object or one keyed by subcommand name. Flags given on the
    /// command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "FME_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write W.csv, y.csv and truth.json.
    Simulate(SimulateArgs),
    /// Estimate the rank of the covariate covariance.
    Rank(RankArgs),
    /// Fit a slope by regression calibration or spectral truncation.
    Fit(FitArgs),
    /// Apply a saved fit to new curves.
    Predict(PredictArgs),
    /// Replicated simulate-and-fit study.
    Compare(CompareArgs),
    /// Function-on-function analysis of user data with diagnostics.
    Analyze(AnalyzeArgs),
}

/// Tuning of the rank procedures and the completion optimizer.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RankOpts {
    /// Subgrid stride m; L* = floor(L / m).
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of subgrid draws B.
    #[arg(long = "b", visible_alias = "B")]
    pub b: Option<usize>,
    /// Largest rank scanned, M.
    #[arg(long = "max-rank", visible_alias = "M")]
    pub max_rank: Option<usize>,
    /// Band half-width fraction delta* of the completion mask.
    #[arg(long)]
    pub delta_star: Option<f64>,
    /// c1 = multiplier * L*^2.
    #[arg(long = "c1-multiplier")]
    pub c1_multiplier: Option<f64>,
    /// Condition-number cap c2 of the essential rank.
    #[arg(long)]
    pub c2: Option<f64>,
    /// Optimizer restarts per rank.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Gradient infinity-norm tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// M1 to M6.
    #[arg(long)]
    pub model: Option<String>,
    /// JSON model specification; overrides --model.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// banded, iid or none.
    #[arg(long)]
    pub error: Option<String>,
    /// Bandwidth of the banded error.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Node variance of the i.i.d. error.
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid size L.
    #[arg(long = "l", visible_alias = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write X.csv and U.csv.
    #[arg(long)]
    pub latent: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RankArgs {
    /// Curve file (first row grid).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Essential rank instead of the mode rank.
    #[arg(long)]
    pub essential: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    /// Covariate curves W.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Response: scalar file or curve file.
    #[arg(long)]
    pub response: Option<PathBuf>,
    /// scalar or functional.
    #[arg(long)]
    pub response_kind: Option<String>,
    /// rc, st or rc-quadratic.
    #[arg(long)]
    pub method: Option<String>,
    /// mode, essential or a fixed rank (rc methods).
    #[arg(long = "rank")]
    pub rank_choice: Option<String>,
    /// Fixed number of components for st; cross-validated when absent.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub cv_reps: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Inverse fourth-moment coefficients four times the Moore-Penrose ones.
    #[arg(long)]
    pub paper_coefficients: bool,
    /// truth.json for the L2 error report; defaults to truth.json beside the input.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictArgs {
    /// fit.json written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Observed responses; prints R^2 when given.
    #[arg(long)]
    pub actual: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareArgs {
    /// Comma-separated models.
    #[arg(long)]
    pub models: Option<String>,
    /// banded, iid or none.
    #[arg(long)]
    pub error: Option<String>,
    /// Comma-separated bandwidths (banded error).
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub variance: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    pub ns: Option<String>,
    /// Comma-separated methods: rc, st.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// mode, essential or a fixed rank.
    #[arg(long = "rank")]
    pub rank_choice: Option<String>,
    #[arg(long = "l", visible_alias = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub cv_reps: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeArgs {
    /// Covariate curves.
    #[arg(long)]
    pub covariate: Option<PathBuf>,
    /// Response curves, one per covariate curve.
    #[arg(long)]
    pub response: Option<PathBuf>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub cv_reps: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Fills options missing on the command line from the config file.
fn merged<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Value>, command: &str) -> Result<T> {
    let Some(config) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(cli)?)?);
    };
    let base = match config.get(command) {
        Some(section @ Value::Object(_)) => section.clone(),
        _ => config.clone(),
    };
    let Value::Object(mut base) = base else {
        bail!("config must be a JSON object");
    };
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (key, value) in flags {
        if !matches!(value, Value::Null | Value::Bool(false)) {
            base.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(base)).context("invalid value in config file")
}

fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let config = cli.config.as_deref().map(read_config).transpose()?;
    let config = config.as_ref();
    match &cli.command {
        Command::Simulate(a) => commands::simulate(merged(a, config, "simulate")?),
        Command::Rank(a) => commands::rank(merged(a, config, "rank")?),
        Command::Fit(a) => commands::fit(merged(a, config, "fit")?),
        Command::Predict(a) => commands::predict(merged(a, config, "predict")?),
        Command::Compare(a) => commands::compare(merged(a, config, "compare")?),
        Command::Analyze(a) => commands::analyze(merged(a, config, "analyze")?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
