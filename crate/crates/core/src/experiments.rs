//! Monte Carlo performance estimates: false-alarm probability, detection
//! delay, average run length, change-type attribution, delay scaling in
//! the horizon, and robustness to heavy-tailed noise.
//!
//! Every study fans replications out over rayon with one seeded generator
//! per replication, so reports are identical for identical inputs.

use rayon::prelude::*;

use crate::calibration::null_line;
use crate::detector::{
    theorem_scale_config, DetectionEvent, Detector, DetectorConfig, PrechangeMode, TheoremTarget,
};
use crate::prechange::{historical_moments, PrechangeLine, TimeScale};
use crate::signal_model::{replication_seed, ChangeKind, NoiseSpec, SignalParams, SignalStream, PRNG_NAME};
use crate::{FlocError, Result};

const Z95: f64 = 1.959_963_984_540_054;

/// Feeds `k` historical values and then up to `limit` monitored ones to a
/// fresh detector. Returns the first alarm, if any.
fn monitor<I>(
    mut values: I,
    k: usize,
    config: &DetectorConfig,
    mode: &PrechangeMode,
    standardize: bool,
    limit: usize,
) -> Result<Option<DetectionEvent>>
where
    I: Iterator<Item = f64>,
{
    let mut history: Vec<f64> = values.by_ref().take(k).collect();
    if history.len() < k {
        return Err(FlocError::InsufficientData { needed: k, got: history.len() });
    }
    let (mean, sd) = if standardize { historical_moments(&history)? } else { (0.0, 1.0) };
    if standardize {
        history.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
    let mut detector = Detector::new(*config, mode.baseline(&history)?, k)?;
    for x in values.take(limit) {
        if let Some(event) = detector.step((x - mean) / sd)?.event {
            return Ok(Some(event));
        }
    }
    Ok(None)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        f64::NAN
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

fn proportion_halfwidth(p: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        Z95 * (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Six significant digits for human-readable output.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn fmt_opt_bin(b: Option<usize>) -> String {
    b.map_or_else(|| "none".into(), |b| b.to_string())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn fmt_mode(mode: &PrechangeMode) -> String {
    match mode {
        PrechangeMode::Fit(scale) => format!("fit:{scale}"),
        PrechangeMode::Known(line) => format!("known:{}:{}:{}", line.alpha, line.beta, line.time_scale),
    }
}

fn config_fields(c: &DetectorConfig) -> Vec<(&'static str, String)> {
    vec![
        ("jump_bin", fmt_opt_bin(c.jump_bin)),
        ("kink_bin", fmt_opt_bin(c.kink_bin)),
        ("rho_jump", c.rho_jump.to_string()),
        ("rho_kink", c.rho_kink.to_string()),
    ]
}

fn to_csv(fields: &[(&'static str, String)]) -> String {
    let header: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
    let row: Vec<&str> = fields.iter().map(|(_, v)| v.as_str()).collect();
    format!("{}\n{}\n", header.join(","), row.join(","))
}

fn to_text(title: &str, fields: &[(&'static str, String)]) -> String {
    let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (k, v) in fields {
        let shown = v.parse::<f64>().ok().filter(|_| v.contains('.') || v.contains('e')).map_or_else(|| v.clone(), fmt_sig);
        out.push_str(&format!("  {k:<width$}  {shown}\n"));
    }
    out
}

/// One simulated setting: a signal, a noise law and a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub theta: SignalParams,
    /// Horizon of the design interval and length of each simulated series.
    pub n: usize,
    pub k: usize,
    pub noise: NoiseSpec,
    pub config: DetectorConfig,
    pub prechange: PrechangeMode,
    pub replications: usize,
    pub master_seed: u64,
    /// Rescale each series by the mean and sd of its history before fitting.
    pub standardize: bool,
}

impl Scenario {
    /// Zero pre-change line, Gaussian noise and a change right after
    /// observation `change_index`; `slope_change` is per observation.
    #[allow(clippy::too_many_arguments)]
    pub fn change_after(
        n: usize,
        k: usize,
        change_index: usize,
        jump: f64,
        slope_change: f64,
        config: DetectorConfig,
        replications: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            theta: SignalParams::change_after(n, change_index, jump, slope_change),
            n,
            k,
            noise: NoiseSpec::standard(),
            config,
            prechange: PrechangeMode::Fit(TimeScale::Index),
            replications,
            master_seed,
            standardize: false,
        }
    }

    pub fn change_index(&self) -> usize {
        self.theta.change_index(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(FlocError::invalid("at least one replication is required"));
        }
        if self.k >= self.n {
            return Err(FlocError::invalid(format!(
                "history length {} leaves nothing to monitor in a series of {}",
                self.k, self.n
            )));
        }
        if matches!(self.prechange, PrechangeMode::Fit(_)) && self.k < 2 {
            return Err(FlocError::InsufficientData { needed: 2, got: self.k });
        }
        if self.change_index() < self.k {
            return Err(FlocError::invalid(format!(
                "change index {} falls inside the history of length {}",
                self.change_index(),
                self.k
            )));
        }
        self.noise.validate()?;
        self.config.validate()
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let mut f = vec![
            ("tau", self.theta.tau.to_string()),
            ("alpha_minus", self.theta.alpha_minus.to_string()),
            ("alpha_plus", self.theta.alpha_plus.to_string()),
            ("beta_minus", self.theta.beta_minus.to_string()),
            ("beta_plus", self.theta.beta_plus.to_string()),
            ("n", self.n.to_string()),
            ("k", self.k.to_string()),
            ("change_index", self.change_index().to_string()),
            ("noise", self.noise.to_string()),
            ("prechange", fmt_mode(&self.prechange)),
        ];
        f.extend(config_fields(&self.config));
        f.extend([
            ("standardize", self.standardize.to_string()),
            ("replications", self.replications.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("prng", PRNG_NAME.to_string()),
        ]);
        f
    }
}

/// Alarm of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub alarm: Option<usize>,
    pub kind: Option<ChangeKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub runs: Vec<RunRecord>,
    /// Alarms strictly before the change index.
    pub false_alarms: usize,
    /// Alarms at or after the change index.
    pub detections: usize,
    pub no_detections: usize,
    pub fa_prob: f64,
    pub fa_halfwidth: f64,
    /// Mean of `alarm - change_index` over detections; `None` without any.
    pub edd: Option<f64>,
    pub edd_sd: Option<f64>,
    pub edd_halfwidth: Option<f64>,
    /// Detections attributed to the kind of the simulated change.
    pub correct_type: usize,
    pub type_accuracy: Option<f64>,
    pub type_halfwidth: Option<f64>,
}

impl MetricsReport {
    /// Too few replications, or intervals too wide to read much into.
    pub fn wide_ci(&self) -> bool {
        self.scenario.replications < 30
            || !(self.fa_halfwidth <= 0.1)
            || self.edd.is_some_and(|e| !self.edd_halfwidth.is_some_and(|h| h <= 0.25 * e.max(1.0)))
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let mut f = self.scenario.fields();
        f.extend([
            ("false_alarms", self.false_alarms.to_string()),
            ("detections", self.detections.to_string()),
            ("no_detections", self.no_detections.to_string()),
            ("fa_prob", self.fa_prob.to_string()),
            ("fa_ci95", self.fa_halfwidth.to_string()),
            ("edd", fmt_opt(self.edd)),
            ("edd_sd", fmt_opt(self.edd_sd)),
            ("edd_ci95", fmt_opt(self.edd_halfwidth)),
            ("correct_type", self.correct_type.to_string()),
            ("type_accuracy", fmt_opt(self.type_accuracy)),
            ("type_ci95", fmt_opt(self.type_halfwidth)),
            ("wide_ci", self.wide_ci().to_string()),
        ]);
        f
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.fields())
    }

    pub fn to_text(&self) -> String {
        to_text("detection metrics", &self.fields())
    }
}

/// Runs the scenario's detector on fresh series and summarises the alarms.
pub fn estimate_metrics(scenario: &Scenario) -> Result<MetricsReport> {
    scenario.validate()?;
    let s = scenario;
    let runs = (0..s.replications as u64)
        .into_par_iter()
        .map(|i| {
            let stream = SignalStream::new(s.theta, s.n, &s.noise, replication_seed(s.master_seed, i))?;
            let event = monitor(stream, s.k, &s.config, &s.prechange, s.standardize, s.n - s.k)?;
            Ok(RunRecord {
                alarm: event.map(|e| e.time),
                kind: event.map(|e| e.kind),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(*scenario, runs))
}

fn summarize(scenario: Scenario, runs: Vec<RunRecord>) -> MetricsReport {
    let change = scenario.change_index();
    let truth = scenario.theta.nominal_kind();
    let r = runs.len();
    let false_alarms = runs.iter().filter(|x| x.alarm.is_some_and(|a| a < change)).count();
    let post: Vec<&RunRecord> = runs.iter().filter(|x| x.alarm.is_some_and(|a| a >= change)).collect();
    let delays: Vec<f64> = post.iter().map(|x| (x.alarm.unwrap() - change) as f64).collect();
    let correct_type = post.iter().filter(|x| truth.is_some() && x.kind == truth).count();
    let detections = post.len();
    let fa_prob = false_alarms as f64 / r as f64;
    let (edd, sd) = mean_sd(&delays);
    let type_accuracy = (detections > 0 && truth.is_some()).then(|| correct_type as f64 / detections as f64);
    MetricsReport {
        scenario,
        false_alarms,
        detections,
        no_detections: r - false_alarms - detections,
        fa_prob,
        fa_halfwidth: proportion_halfwidth(fa_prob, r),
        edd: (detections > 0).then_some(edd),
        edd_sd: (detections > 1).then_some(sd),
        edd_halfwidth: (detections > 1).then(|| Z95 * sd / (detections as f64).sqrt()),
        correct_type,
        type_accuracy,
        type_halfwidth: type_accuracy.map(|p| proportion_halfwidth(p, detections)),
        runs,
    }
}

/// Null runs for an average-run-length estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArlSpec {
    pub config: DetectorConfig,
    pub noise: NoiseSpec,
    pub k: usize,
    /// Runs still silent after `cap` monitored observations count as `cap`.
    pub cap: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub prechange: PrechangeMode,
    pub standardize: bool,
}

impl ArlSpec {
    /// Index-time fit, no standardisation, and the default cap of ten
    /// times the target.
    pub fn for_target(config: DetectorConfig, k: usize, target: usize, replications: usize, master_seed: u64) -> Self {
        Self {
            config,
            noise: NoiseSpec::standard(),
            k,
            cap: 10 * target,
            replications,
            master_seed,
            prechange: PrechangeMode::Fit(TimeScale::Index),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArlReport {
    pub spec: ArlSpec,
    /// Monitored observations up to and including the alarm, or `cap`.
    pub run_lengths: Vec<usize>,
    pub censored: usize,
    /// Biased low when runs are censored.
    pub arl: f64,
    pub sd: f64,
    pub halfwidth: f64,
}

impl ArlReport {
    /// Mean over standard deviation of the run lengths; near 1 for an
    /// exponential law.
    pub fn mean_sd_ratio(&self) -> f64 {
        self.arl / self.sd
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let s = &self.spec;
        let mut f = vec![
            ("k", s.k.to_string()),
            ("noise", s.noise.to_string()),
            ("prechange", fmt_mode(&s.prechange)),
        ];
        f.extend(config_fields(&s.config));
        f.extend([
            ("standardize", s.standardize.to_string()),
            ("cap", s.cap.to_string()),
            ("replications", s.replications.to_string()),
            ("master_seed", s.master_seed.to_string()),
            ("prng", PRNG_NAME.to_string()),
            ("arl", self.arl.to_string()),
            ("arl_sd", self.sd.to_string()),
            ("arl_ci95", self.halfwidth.to_string()),
            ("censored", self.censored.to_string()),
        ]);
        f
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.fields())
    }

    pub fn to_text(&self) -> String {
        let mut out = to_text("average run length", &self.fields());
        if self.censored > 0 {
            out.push_str(&format!(
                "  note: {} runs censored at {}; the ARL is biased low\n",
                self.censored, self.spec.cap
            ));
        }
        out
    }
}

/// Mean time to the first alarm on change-free streams.
pub fn estimate_arl(spec: &ArlSpec) -> Result<ArlReport> {
    if spec.cap == 0 {
        return Err(FlocError::invalid("cap must be at least 1"));
    }
    if spec.replications == 0 {
        return Err(FlocError::invalid("at least one replication is required"));
    }
    spec.config.validate()?;
    let line = null_line(&spec.prechange);
    let run_lengths = (0..spec.replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut noise = spec.noise.sampler(replication_seed(spec.master_seed, i))?;
            let stream = (1..).map(|j| line.predict_index(j) + noise.draw());
            let event = monitor(stream, spec.k, &spec.config, &spec.prechange, spec.standardize, spec.cap)?;
            Ok(event.map_or(spec.cap, |e| e.clock as usize))
        })
        .collect::<Result<Vec<usize>>>()?;
    let censored = run_lengths.iter().filter(|&&l| l >= spec.cap).count();
    let xs: Vec<f64> = run_lengths.iter().map(|&l| l as f64).collect();
    let (arl, sd) = mean_sd(&xs);
    Ok(ArlReport {
        spec: *spec,
        censored,
        arl,
        sd,
        halfwidth: Z95 * sd / (xs.len() as f64).sqrt(),
        run_lengths,
    })
}

/// Location of the change in rate studies, as a fraction of the horizon.
pub const RATE_TAU: f64 = 0.6;
/// Observations simulated after the change, in multiples of the bin size.
pub const RATE_POST_BINS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub k: usize,
    pub change_index: usize,
    pub bin: usize,
    pub threshold: f64,
    pub detections: usize,
    pub false_alarms: usize,
    pub mean_delay: Option<f64>,
    /// Fewer than half of the replications detected the change.
    pub insufficient: bool,
}

impl RateRow {
    pub fn delay_over_log_n(&self) -> Option<f64> {
        self.mean_delay.map(|d| d / (self.n as f64).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub kind: ChangeKind,
    pub c: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub rows: Vec<RateRow>,
}

impl RateReport {
    /// Least-squares slope of log mean delay against log n over rows with
    /// a delay estimate.
    pub fn log_log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.mean_delay.filter(|&d| d > 0.0).map(|d| ((r.n as f64).ln(), d.ln())))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// Largest over smallest `delay / ln n` across the grid.
    pub fn log_ratio_spread(&self) -> Option<f64> {
        let ratios: Vec<f64> = self.rows.iter().filter_map(RateRow::delay_over_log_n).collect();
        if ratios.is_empty() {
            return None;
        }
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        Some(max / min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,c,n,k,change_index,bin,threshold,replications,master_seed,detections,false_alarms,mean_delay,delay_over_log_n,insufficient\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.kind,
                self.c,
                r.n,
                r.k,
                r.change_index,
                r.bin,
                r.threshold,
                self.replications,
                self.master_seed,
                r.detections,
                r.false_alarms,
                fmt_opt(r.mean_delay),
                fmt_opt(r.delay_over_log_n()),
                r.insufficient
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} delay scaling, c = {}, {} replications, seed {}\n",
            self.kind, self.c, self.replications, self.master_seed
        );
        out.push_str(&format!(
            "  {:>8} {:>8} {:>12} {:>12} {:>12} {:>10}\n",
            "n", "bin", "threshold", "mean_delay", "delay/ln n", "detected"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "  {:>8} {:>8} {:>12} {:>12} {:>12} {:>10}{}\n",
                r.n,
                r.bin,
                fmt_sig(r.threshold),
                r.mean_delay.map_or("NA".into(), fmt_sig),
                r.delay_over_log_n().map_or("NA".into(), fmt_sig),
                r.detections,
                if r.insufficient { "  (insufficient)" } else { "" }
            ));
        }
        out.push_str(&format!(
            "  log-log slope {}, delay/ln n spread {}\n",
            self.log_log_slope().map_or("NA".into(), fmt_sig),
            self.log_ratio_spread().map_or("NA".into(), fmt_sig)
        ));
        out
    }
}

/// Mean detection delay of the rate-tuned detectors across horizons.
///
/// For each `n` the history is the first `ceil(c n)` observations of a
/// unit-noise series with a zero pre-change line, fitted in fractional
/// time. A jump of 1 or a slope change of 1 per unit of the design interval
/// follows observation `ceil(0.6 n)`, and the series runs for
/// `RATE_POST_BINS` bins beyond it.
pub fn rate_check(c: f64, n_grid: &[usize], kind: ChangeKind, replications: usize, master_seed: u64) -> Result<RateReport> {
    if n_grid.len() < 4 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FlocError::invalid("n grid must be strictly ascending with at least 4 points"));
    }
    if replications == 0 {
        return Err(FlocError::invalid("at least one replication is required"));
    }
    if !(c > 0.0 && c < RATE_TAU) {
        return Err(FlocError::invalid(format!("rate constant must lie in (0, {RATE_TAU}), got {c}")));
    }
    let rows = n_grid
        .iter()
        .map(|&n| {
            let target = match kind {
                ChangeKind::Jump => TheoremTarget::Jump,
                ChangeKind::Kink => TheoremTarget::Kink,
            };
            let config = theorem_scale_config(n as f64, c, target)?;
            let (bin, threshold) = match kind {
                ChangeKind::Jump => (config.jump_bin.unwrap_or(0), config.rho_jump),
                ChangeKind::Kink => (config.kink_bin.unwrap_or(0), config.rho_kink),
            };
            let k = (c * n as f64).ceil() as usize;
            let theta = match kind {
                ChangeKind::Jump => SignalParams::new(RATE_TAU, 0.0, 1.0, 0.0, 0.0),
                ChangeKind::Kink => SignalParams::new(RATE_TAU, 0.0, 0.0, 0.0, 1.0),
            };
            let change = theta.change_index(n);
            let limit = change - k + RATE_POST_BINS * bin;
            let mode = PrechangeMode::Fit(TimeScale::Fraction(n));
            let seed = replication_seed(master_seed, n as u64);
            let alarms = (0..replications as u64)
                .into_par_iter()
                .map(|i| {
                    let stream = SignalStream::new(theta, n, &NoiseSpec::standard(), replication_seed(seed, i))?;
                    Ok(monitor(stream, k, &config, &mode, false, limit)?.map(|e| e.time))
                })
                .collect::<Result<Vec<_>>>()?;
            let delays: Vec<f64> = alarms
                .iter()
                .flatten()
                .filter(|&&a| a >= change)
                .map(|&a| (a - change) as f64)
                .collect();
            let false_alarms = alarms.iter().flatten().filter(|&&a| a < change).count();
            Ok(RateRow {
                n,
                k,
                change_index: change,
                bin,
                threshold,
                detections: delays.len(),
                false_alarms,
                mean_delay: (!delays.is_empty()).then(|| mean_sd(&delays).0),
                insufficient: 2 * delays.len() < replications,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport {
        kind,
        c,
        replications,
        master_seed,
        rows,
    })
}

/// One arm of a heavy-tail study: a detector already calibrated under
/// Gaussian noise and the change it should find.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessTemplate {
    pub config: DetectorConfig,
    pub k: usize,
    pub arl_cap: usize,
    pub jump: f64,
    /// Slope change per observation.
    pub slope_change: f64,
    /// Observations simulated after the change in delay runs.
    pub post_change: usize,
    pub replications: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    /// Infinite for the Gaussian arm.
    pub df: f64,
    pub arl: ArlReport,
    pub metrics: MetricsReport,
}

/// Noise law of a robustness arm; infinite `df` stands for unit Gaussian noise.
pub fn robustness_noise(df: f64) -> NoiseSpec {
    if df.is_infinite() {
        NoiseSpec::standard()
    } else {
        NoiseSpec::StudentT { df }
    }
}

/// Applies the template's detector to Student-t streams of each `df`, every
/// series standardised by its historical mean and sd, and reports ARL and
/// delay. The change follows observation `k` in delay runs.
pub fn robustness_study(df_grid: &[f64], template: &RobustnessTemplate) -> Result<Vec<RobustnessRow>> {
    if df_grid.iter().any(|&d| !(d > 0.0)) {
        return Err(FlocError::invalid("degrees of freedom must be positive"));
    }
    let t = template;
    df_grid
        .iter()
        .map(|&df| {
            let noise = robustness_noise(df);
            let arl = estimate_arl(&ArlSpec {
                config: t.config,
                noise,
                k: t.k,
                cap: t.arl_cap,
                replications: t.replications,
                master_seed: t.master_seed,
                prechange: PrechangeMode::Fit(TimeScale::Index),
                standardize: true,
            })?;
            let n = t.k + t.post_change;
            let scenario = Scenario {
                noise,
                standardize: true,
                ..Scenario::change_after(n, t.k, t.k, t.jump, t.slope_change, t.config, t.replications, t.master_seed)
            };
            Ok(RobustnessRow {
                df,
                arl,
                metrics: estimate_metrics(&scenario)?,
            })
        })
        .collect()
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("df,jump_bin,kink_bin,rho_jump,rho_kink,k,replications,master_seed,arl,arl_ci95,censored,edd,edd_ci95,detections,false_alarms\n");
    for r in rows {
        let c = &r.arl.spec.config;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.df,
            fmt_opt_bin(c.jump_bin),
            fmt_opt_bin(c.kink_bin),
            c.rho_jump,
            c.rho_kink,
            r.arl.spec.k,
            r.arl.spec.replications,
            r.arl.spec.master_seed,
            r.arl.arl,
            r.arl.halfwidth,
            r.arl.censored,
            fmt_opt(r.metrics.edd),
            fmt_opt(r.metrics.edd_halfwidth),
            r.metrics.detections,
            r.metrics.false_alarms
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeRow {
    pub true_kind: ChangeKind,
    /// Alarms at or after the change.
    pub alarms: usize,
    pub misattributed: usize,
}

impl TypeRow {
    pub fn rate(&self) -> Option<f64> {
        (self.alarms > 0).then(|| self.misattributed as f64 / self.alarms as f64)
    }
}

/// Fraction of post-change alarms raised by the wrong statistic, per scenario.
pub fn type_discrimination_study(scenarios: &[Scenario]) -> Result<Vec<TypeRow>> {
    scenarios
        .iter()
        .map(|s| {
            let true_kind = s
                .theta
                .nominal_kind()
                .ok_or_else(|| FlocError::invalid("type study needs a scenario with a change"))?;
            let report = estimate_metrics(s)?;
            Ok(TypeRow {
                true_kind,
                alarms: report.detections,
                misattributed: report.detections - report.correct_type,
            })
        })
        .collect()
}
