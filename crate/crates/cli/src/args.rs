use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Streaming jump and kink detection for segmented linear signals.
#[derive(Debug, Parser)]
#[command(name = "floc", version)]
pub struct Cli {
    /// Worker threads for calibration and experiments (default: all cores).
    #[arg(long, global = true, env = "FLOC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monitor a data file and report the first alarm.
    Detect(DetectArgs),
    /// Tune thresholds by simulation and write a calibration file.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic series with a sidecar truth file.
    Simulate(SimulateArgs),
    /// Re-run one of the simulation studies.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// CSV with one column of values or two columns `time,value`; `-` reads stdin.
    #[arg(short, long)]
    pub input: PathBuf,

    /// Number of leading observations used to fit the pre-change line.
    #[arg(short, long, conflicts_with = "split_time")]
    pub k: Option<usize>,

    /// Use every observation with time up to this value as history.
    #[arg(long)]
    pub split_time: Option<String>,

    /// Calibration file supplying bin sizes and thresholds.
    #[arg(short, long)]
    pub calibration: Option<PathBuf>,

    /// Bin size of both statistics.
    #[arg(long)]
    pub bin: Option<usize>,

    /// Jump bin size, or `none` to disable the jump statistic.
    #[arg(long)]
    pub jump_bin: Option<String>,

    /// Kink bin size, or `none` to disable the kink statistic.
    #[arg(long)]
    pub kink_bin: Option<String>,

    /// Jump threshold; `inf` silences the jump statistic.
    #[arg(long)]
    pub rho_jump: Option<f64>,

    /// Kink threshold; `inf` silences the kink statistic.
    #[arg(long)]
    pub rho_kink: Option<f64>,

    /// Rescale by the mean and standard deviation of the history.
    #[arg(long)]
    pub standardize: bool,

    /// Known noise standard deviation; observations are divided by it.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Regression time scale: `index` or `fraction:<n>`.
    #[arg(long)]
    pub time_scale: Option<String>,

    /// Write one CSV row per monitored observation to this path.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration spec file (`# floc calibration-spec v1`); defaults apply without one.
    #[arg(short, long)]
    pub spec: Option<PathBuf>,

    /// Output path; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub replications: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (`# floc scenario v1`).
    #[arg(short, long)]
    pub scenario: PathBuf,

    /// Output CSV; the truth file is written next to it with `.truth` appended.
    #[arg(short, long)]
    pub out: PathBuf,

    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    /// False-alarm calibration and delays (N, k grid).
    Table2,
    /// Run-length calibration, ARL and delays.
    Table3,
    /// Student-t robustness of Gaussian-calibrated detectors.
    Table5,
    /// Delay scaling with the horizon for the rate-tuned detectors.
    Rates,
    /// Which statistic fires first for jumps and kinks.
    Types,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateKind {
    Jump,
    Kink,
    Both,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub name: ExperimentName,

    /// Directory for the CSV outputs.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// Evaluation replications (default: the study's own count).
    #[arg(long)]
    pub replications: Option<usize>,

    /// Calibration replications (default 10000).
    #[arg(long)]
    pub cal_replications: Option<usize>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Restrict table rows to this bin size.
    #[arg(long)]
    pub bin: Option<usize>,

    /// Restrict table rows to this history length.
    #[arg(long)]
    pub k: Option<usize>,

    /// Rate constant for `rates`.
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,

    /// Comma-separated horizons for `rates`.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,

    /// Statistic studied by `rates`.
    #[arg(long, value_enum, default_value_t = RateKind::Both)]
    pub kind: RateKind,

    /// Comma-separated degrees of freedom for `table5`; `inf` is the Gaussian arm.
    #[arg(long, value_delimiter = ',')]
    pub df_grid: Option<Vec<f64>>,
}
