use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use floc::calibration::{calibrate, calibrate_arl, BinLayout, CalibrationResult, CalibrationSpec};
use floc::detector::{run, DetectorConfig, PrechangeMode, RunOutcome};
use floc::experiments::fmt_sig;
use floc::prechange::{standardize, TimeScale};
use floc::signal_model::{generate_series, NoiseSpec, SignalParams, PRNG_NAME};

use crate::args::{CalibrateArgs, DetectArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::input::{read_series, split_index, InputData};
use crate::kv::{KvFile, KvWriter};

/// Bin size used when neither flags nor a calibration file give one.
pub const DEFAULT_BIN: usize = 10;
/// Jointly calibrated thresholds for bin size 10, 1000 historical
/// observations and unit noise at false-alarm level 0.5 over the next 1000.
pub const DEFAULT_RHO_JUMP: f64 = 0.687;
pub const DEFAULT_RHO_KINK: f64 = 0.05;

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn warn(msg: &str) {
    eprintln!("floc: warning: {msg}");
}

fn read_input(path: &Path) -> CliResult<InputData> {
    if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| CliError::Io(format!("stdin: {e}")))?;
        read_series(buf.as_slice(), "stdin")
    } else {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        read_series(file, &path.display().to_string())
    }
}

fn parse_bin(flag: &str, value: &str) -> CliResult<Option<usize>> {
    if value.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    value
        .parse()
        .map(Some)
        .map_err(|_| CliError::usage(format!("--{flag} expects a bin size or `none`, got `{value}`")))
}

fn parse_time_scale(value: &str) -> CliResult<TimeScale> {
    value.parse().map_err(|e: floc::FlocError| CliError::usage(e.to_string()))
}

/// Detector settings from defaults, then the calibration file, then flags.
fn resolve_config(args: &DetectArgs) -> CliResult<(DetectorConfig, TimeScale)> {
    let mut config = DetectorConfig::both(DEFAULT_BIN, DEFAULT_RHO_JUMP, DEFAULT_RHO_KINK);
    let mut scale = TimeScale::Index;
    if let Some(path) = &args.calibration {
        let kv = KvFile::parse(&read_text(path)?, &path.display().to_string(), "calibration")?;
        config = DetectorConfig {
            jump_bin: kv.bin("jump_bin", None)?,
            kink_bin: kv.bin("kink_bin", None)?,
            rho_jump: kv.require("rho_jump")?,
            rho_kink: kv.require("rho_kink")?,
        };
        if let Some(s) = kv.get("time_scale") {
            scale = parse_time_scale(s)?;
        }
    }
    if let Some(b) = args.bin {
        config.jump_bin = Some(b);
        config.kink_bin = Some(b);
    }
    if let Some(b) = &args.jump_bin {
        config.jump_bin = parse_bin("jump-bin", b)?;
    }
    if let Some(b) = &args.kink_bin {
        config.kink_bin = parse_bin("kink-bin", b)?;
    }
    if let Some(r) = args.rho_jump {
        config.rho_jump = r;
    }
    if let Some(r) = args.rho_kink {
        config.rho_kink = r;
    }
    if config.jump_bin.is_none() {
        config.rho_jump = f64::INFINITY;
    }
    if config.kink_bin.is_none() {
        config.rho_kink = f64::INFINITY;
    }
    if let Some(s) = &args.time_scale {
        scale = parse_time_scale(s)?;
    }
    config.validate()?;
    if !config.can_alarm() {
        return Err(CliError::usage("no enabled statistic has a finite threshold"));
    }
    Ok((config, scale))
}

fn resolve_k(args: &DetectArgs, data: &InputData) -> CliResult<usize> {
    let k = match (&args.k, &args.split_time) {
        (Some(k), _) => *k,
        (None, Some(split)) => {
            let times = data
                .times
                .as_ref()
                .ok_or_else(|| CliError::usage("--split-time needs a two-column input with times"))?;
            split_index(times, split)
        }
        (None, None) => return Err(CliError::usage("give the history length with --k or --split-time")),
    };
    if k < 2 {
        return Err(CliError::usage(format!("history length must be at least 2, got {k}")));
    }
    if k >= data.values.len() {
        return Err(CliError::usage(format!(
            "history length {k} leaves nothing to monitor in {} observations",
            data.values.len()
        )));
    }
    Ok(k)
}

/// Result of `detect`, also rendered as the printed report.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectReport {
    pub source: String,
    pub observations: usize,
    pub k: usize,
    pub config: DetectorConfig,
    pub time_scale: TimeScale,
    pub standardize: bool,
    pub sigma: Option<f64>,
    pub outcome: RunOutcome,
    pub alarm_label: Option<String>,
}

impl DetectReport {
    pub fn render(&self) -> String {
        let mut w = KvWriter::new("detection");
        w.field("input", &self.source)
            .field("observations", self.observations)
            .field("k", self.k)
            .field("time_scale", self.time_scale)
            .field("standardize", self.standardize)
            .field("sigma", self.sigma.map_or("none".into(), |s| s.to_string()))
            .field("alpha_hat", fmt_sig(self.outcome.baseline.intercept()))
            .field("beta_hat", fmt_sig(self.outcome.baseline.slope()))
            .bin("jump_bin", self.config.jump_bin)
            .bin("kink_bin", self.config.kink_bin)
            .field("rho_jump", self.config.rho_jump)
            .field("rho_kink", self.config.rho_kink)
            .field("alarm", self.outcome.detected());
        if let Some(e) = self.outcome.event {
            w.field("alarm_index", e.time)
                .field("alarm_kind", e.kind)
                .field("statistic", fmt_sig(e.stat_value))
                .field("threshold", e.threshold)
                .field("monitored", e.clock);
            if let Some(label) = &self.alarm_label {
                w.field("alarm_time", label);
            }
        }
        w.finish()
    }
}

fn write_trace(path: &Path, values: &[f64], outcome: &RunOutcome, config: &DetectorConfig) -> CliResult<()> {
    let io_err = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(["index", "observation", "residual", "j_stat", "k_stat", "rho_jump", "rho_kink", "alarm", "kind"])
        .map_err(io_err)?;
    let alarm = outcome.event.map(|e| (e.time, e.kind));
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for s in outcome.trace.as_deref().unwrap_or_default() {
        let fired = alarm.filter(|a| a.0 == s.index);
        w.write_record([
            s.index.to_string(),
            values[s.index - 1].to_string(),
            s.residual.to_string(),
            opt(s.j_stat),
            opt(s.k_stat),
            config.rho_jump.to_string(),
            config.rho_kink.to_string(),
            fired.is_some().to_string(),
            fired.map_or(String::new(), |a| a.1.to_string()),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_detect(args: &DetectArgs) -> CliResult<DetectReport> {
    let data = read_input(&args.input)?;
    for w in &data.warnings {
        warn(w);
    }
    let k = resolve_k(args, &data)?;
    let (config, time_scale) = resolve_config(args)?;
    if args.standardize && args.sigma.is_some() {
        return Err(CliError::usage("--standardize and --sigma are mutually exclusive"));
    }
    let mut values = data.values.clone();
    if let Some(sigma) = args.sigma {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(CliError::usage(format!("--sigma must be positive, got {sigma}")));
        }
        values.iter_mut().for_each(|x| *x /= sigma);
    }
    if args.standardize {
        values = standardize(&values, k)?.values;
    }
    let outcome = run(&values, k, &config, &PrechangeMode::Fit(time_scale), args.trace.is_some())?;
    if let Some(path) = &args.trace {
        write_trace(path, &values, &outcome, &config)?;
    }
    let alarm_label = outcome
        .event
        .and_then(|e| data.times.as_ref().map(|t| t[e.time - 1].clone()));
    Ok(DetectReport {
        source: args.input.display().to_string(),
        observations: values.len(),
        k,
        config,
        time_scale,
        standardize: args.standardize,
        sigma: args.sigma,
        outcome: RunOutcome { trace: None, ..outcome },
        alarm_label,
    })
}

const SPEC_KEYS: &[&str] = &[
    "replications",
    "eta",
    "target",
    "horizon",
    "k",
    "jump_bin",
    "kink_bin",
    "noise",
    "time_scale",
    "master_seed",
];

/// What a calibration aims for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// False-alarm probability `eta` before `k + horizon`.
    FalseAlarm,
    /// Average run length of `horizon` monitored observations.
    RunLength,
}

/// Reads a calibration spec. Defaults: 10000 replications, `eta = 0.5`,
/// horizon 1000, `k = 1000`, both statistics with bin 10, unit Gaussian
/// noise, index time, seed 1.
pub fn parse_calibration_spec(kv: &KvFile) -> CliResult<(CalibrationSpec, Target)> {
    kv.check_keys(SPEC_KEYS)?;
    let target = match kv.get("target").unwrap_or("fa") {
        "fa" => Target::FalseAlarm,
        "arl" => Target::RunLength,
        other => return Err(CliError::usage(format!("target must be `fa` or `arl`, got `{other}`"))),
    };
    let spec = CalibrationSpec {
        replications: kv.value_or("replications", 10_000)?,
        eta: kv.value_or("eta", 0.5)?,
        horizon: kv.value_or("horizon", 1000)?,
        k: kv.value_or("k", 1000)?,
        layout: BinLayout {
            jump_bin: kv.bin("jump_bin", Some(DEFAULT_BIN))?,
            kink_bin: kv.bin("kink_bin", Some(DEFAULT_BIN))?,
        },
        noise: kv.value_or("noise", NoiseSpec::standard())?,
        prechange: PrechangeMode::Fit(kv.value_or("time_scale", TimeScale::Index)?),
        master_seed: kv.value_or("master_seed", 1)?,
    };
    Ok((spec, target))
}

pub fn render_calibration(result: &CalibrationResult, target: Target) -> String {
    let s = &result.spec;
    let opt = |x: Option<f64>| x.map_or("NA".into(), |v| v.to_string());
    let mut w = KvWriter::new("calibration");
    w.comment("thresholds for the statistics of unit-variance noise")
        .bin("jump_bin", s.layout.jump_bin)
        .bin("kink_bin", s.layout.kink_bin)
        .field("rho_jump", result.rho_jump)
        .field("rho_kink", result.rho_kink)
        .field("time_scale", s.prechange.time_scale())
        .field("target", if target == Target::FalseAlarm { "fa" } else { "arl" })
        .field("eta", result.eta)
        .field("eta_marginal", result.eta_marginal)
        .field("empirical_fa", result.empirical_fa)
        .field("fa_jump", opt(result.fa_jump))
        .field("fa_kink", opt(result.fa_kink))
        .field("replications", s.replications)
        .field("horizon", s.horizon)
        .field("k", s.k)
        .field("noise", s.noise)
        .field("master_seed", s.master_seed)
        .field("prng", PRNG_NAME);
    w.finish()
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<(String, CalibrationResult)> {
    let kv = match &args.spec {
        Some(path) => KvFile::parse(&read_text(path)?, &path.display().to_string(), "calibration-spec")?,
        None => KvFile::parse("# floc calibration-spec v1\n", "defaults", "calibration-spec")?,
    };
    let (mut spec, target) = parse_calibration_spec(&kv)?;
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(s) = args.seed {
        spec.master_seed = s;
    }
    let result = match target {
        Target::FalseAlarm => calibrate(&spec)?,
        Target::RunLength => calibrate_arl(&spec)?,
    };
    let text = render_calibration(&result, target);
    Ok((text, result))
}

const SCENARIO_KEYS: &[&str] = &[
    "n",
    "seed",
    "noise",
    "tau",
    "alpha_minus",
    "alpha_plus",
    "beta_minus",
    "beta_plus",
    "change_index",
    "jump",
    "slope_change",
];

/// Reads a scenario: `n`, `seed` and `noise`, plus either the change
/// parameters `tau, alpha_minus, alpha_plus, beta_minus, beta_plus` (slopes
/// per unit of the design interval) or `change_index, jump, slope_change`
/// (slope per observation, zero pre-change line).
pub fn parse_scenario(kv: &KvFile) -> CliResult<(SignalParams, usize, NoiseSpec, u64)> {
    kv.check_keys(SCENARIO_KEYS)?;
    let n: usize = kv.require("n")?;
    if n == 0 {
        return Err(CliError::usage("n must be at least 1"));
    }
    let theta = if let Some(change) = kv.value::<usize>("change_index")? {
        if ["tau", "alpha_minus", "alpha_plus", "beta_minus", "beta_plus"].iter().any(|k| kv.get(k).is_some()) {
            return Err(CliError::usage("give either change_index or tau with the alpha/beta keys, not both"));
        }
        SignalParams::change_after(n, change, kv.value_or("jump", 0.0)?, kv.value_or("slope_change", 0.0)?)
    } else {
        if kv.get("jump").is_some() || kv.get("slope_change").is_some() {
            return Err(CliError::usage("jump and slope_change need change_index"));
        }
        SignalParams::new(
            kv.require("tau")?,
            kv.value_or("alpha_minus", 0.0)?,
            kv.value_or("alpha_plus", 0.0)?,
            kv.value_or("beta_minus", 0.0)?,
            kv.value_or("beta_plus", 0.0)?,
        )
    };
    Ok((theta, n, kv.value_or("noise", NoiseSpec::standard())?, kv.value_or("seed", 1)?))
}

pub fn truth_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".truth");
    PathBuf::from(p)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<PathBuf> {
    let path = &args.scenario;
    let kv = KvFile::parse(&read_text(path)?, &path.display().to_string(), "scenario")?;
    let (theta, n, noise, mut seed) = parse_scenario(&kv)?;
    if let Some(s) = args.seed {
        seed = s;
    }
    let series = generate_series(&theta, n, &noise, seed)?;
    let mut csv = String::from("index,value\n");
    for (i, v) in series.values.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", i + 1));
    }
    write_text(&args.out, &csv)?;

    let mut w = KvWriter::new("truth");
    w.field("n", n)
        .field("tau", theta.tau)
        .field("alpha_minus", theta.alpha_minus)
        .field("alpha_plus", theta.alpha_plus)
        .field("beta_minus", theta.beta_minus)
        .field("beta_plus", theta.beta_plus)
        .field("change_index", theta.change_index(n))
        .field("kind", theta.nominal_kind().map_or("none", |k| k.as_str()))
        .field("noise", noise)
        .field("seed", seed)
        .field("prng", PRNG_NAME);
    let truth = truth_path(&args.out);
    write_text(&truth, &w.finish())?;
    Ok(truth)
}

pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_text(p, text),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}
