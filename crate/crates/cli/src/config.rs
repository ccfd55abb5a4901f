//! Invocation parsing and configuration resolution.
//!
//! Precedence per key: command-line flag, then JSON config file, then the
//! built-in default. Boolean flags can only switch a setting on; use the
//! config file to persist either state.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "crps-combine",
    version,
    about = "Combine quantile forecasts online under the CRPS",
    long_about = "Combine quantile forecasts online under the CRPS.\n\n\
        Internal parallelism is controlled by the RAYON_NUM_THREADS \
        environment variable."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a seeded synthetic study and write summary tables.
    Simulate(SimulateArgs),
    /// Run online combiners over expert forecasts from CSV files.
    Combine(CombineArgs),
    /// Score and compare previously produced forecast files.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Synthetic process: "static" (iid standard normal) or "drifting"
    /// (slowly moving mean, drifting optimal weights).
    #[arg(long)]
    pub dgp: Option<String>,

    /// Number of independent repetitions to average over.
    #[arg(long)]
    pub reps: Option<usize>,

    /// Comma-separated stream lengths, e.g. 32,128,512.
    #[arg(long, visible_alias = "T", value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,

    /// Master seed; repetitions derive deterministic substreams from it.
    #[arg(long)]
    pub seed: u64,

    /// Existing directory that receives results.csv, plot_data.csv and
    /// resolved_config.json.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Forgetting rates for the drifting study's forget variants: "auto"
    /// (dyadic ladder scaled to the longest horizon), "none" (drop the
    /// forget variants), or comma-separated rates in [0,1).
    #[arg(long)]
    pub forget_grid: Option<String>,

    /// Monte-Carlo draws for the per-level best-attainable-loss floor
    /// (static process only; 0 skips the distance metrics).
    #[arg(long)]
    pub floor_mc: Option<usize>,

    /// Shorthand for reps=100 (full scale defaults to 1000).
    #[arg(long)]
    pub desk_scale: bool,

    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Expert forecast CSV with columns time,expert,probability,value.
    #[arg(long)]
    pub experts: Option<PathBuf>,

    /// Observation CSV with columns time,value; its row order defines the
    /// time axis.
    #[arg(long)]
    pub obs: Option<PathBuf>,

    /// Existing directory that receives the per-method output files.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Comma-separated combination methods: naive, ewag, boag-pointwise,
    /// boag-p-smooth, boag-p-constant, boag-b-smooth, boag-b-constant.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,

    /// Forgetting rates raced by the boag methods: "none" (no forgetting),
    /// "auto" (zero plus a dyadic ladder scaled to the stream length), or
    /// comma-separated rates in [0,1).
    #[arg(long)]
    pub forget_grid: Option<String>,

    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Observation CSV with columns time,value.
    #[arg(long)]
    pub obs: Option<PathBuf>,

    /// Forecast file as name=path, with columns time,probability,value;
    /// repeat the flag for each method (at least two).
    #[arg(long = "forecast")]
    pub forecasts: Vec<String>,

    /// Method whose loss the cumulative differences are taken against;
    /// defaults to the first forecast.
    #[arg(long)]
    pub reference: Option<String>,

    /// Newey-West truncation lag for the comparison test's long-run
    /// variance; omitting it uses the plain sample variance.
    #[arg(long)]
    pub dm_lag: Option<usize>,

    /// Apply the small-sample correction with a Student-t reference.
    #[arg(long)]
    pub dm_small_sample: bool,

    /// Existing directory that receives the evaluation tables.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Flat key-value config document shared by all workflows. Unknown keys are
/// rejected so typos surface instead of being ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dgp: Option<String>,
    /// Accepted for completeness; the simulate workflow requires the --seed
    /// flag, which always wins over this key.
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub floor_mc: Option<usize>,
    pub forget_grid: Option<String>,
    pub desk_scale: Option<bool>,
    pub out: Option<PathBuf>,
    pub experts: Option<PathBuf>,
    pub obs: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub forecasts: Option<Vec<String>>,
    pub reference: Option<String>,
    pub dm_lag: Option<usize>,
    pub dm_small_sample: Option<bool>,
}

/// Loads the JSON config file when one was given.
pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Usage(format!("cannot read config file '{}': {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config file '{}': {e}", path.display())))
}

/// Picks the flag value when present, else the config-file value.
pub fn prefer<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Requires a key to be present after merging flag and file sources.
pub fn require<T>(merged: Option<T>, flag_name: &str) -> Result<T, CliError> {
    merged.ok_or_else(|| CliError::Usage(format!("missing required option --{flag_name}")))
}

/// Verifies the output directory exists before any computation starts.
pub fn check_out_dir(out: &Path) -> Result<(), CliError> {
    if !out.is_dir() {
        return Err(CliError::Usage(format!(
            "output directory '{}' does not exist",
            out.display()
        )));
    }
    Ok(())
}

/// How the forgetting rates were requested on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ForgetChoice {
    None,
    Auto,
    Explicit(Vec<f64>),
}

/// Parses the --forget-grid argument.
pub fn parse_forget_choice(raw: &str) -> Result<ForgetChoice, CliError> {
    match raw {
        "none" => Ok(ForgetChoice::None),
        "auto" => Ok(ForgetChoice::Auto),
        list => {
            let mut values = Vec::new();
            for part in list.split(',') {
                let v: f64 = part.trim().parse().map_err(|_| {
                    CliError::Usage(format!(
                        "invalid --forget-grid entry '{part}': expected \"auto\", \"none\" or \
                         comma-separated numbers"
                    ))
                })?;
                if !(0.0..1.0).contains(&v) {
                    return Err(CliError::Usage(format!("forget rate {v} outside [0, 1)")));
                }
                values.push(v);
            }
            if values.is_empty() {
                return Err(CliError::Usage("empty --forget-grid list".to_string()));
            }
            Ok(ForgetChoice::Explicit(values))
        }
    }
}

/// Parses one `name=path` forecast argument.
pub fn parse_forecast_entry(raw: &str) -> Result<(String, PathBuf), CliError> {
    match raw.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(CliError::Usage(format!(
            "invalid --forecast '{raw}': expected name=path"
        ))),
    }
}

/// Serializes the fully resolved configuration next to the outputs so every
/// run is self-describing.
pub fn write_resolved_config<T: Serialize>(out: &Path, resolved: &T) -> Result<(), CliError> {
    let path = out.join("resolved_config.json");
    let text = serde_json::to_string_pretty(resolved).expect("resolved config serializes");
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Usage(format!("cannot write '{}': {e}", path.display())))
}
