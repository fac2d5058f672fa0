//! The streaming jump/kink detector.
//!
//! Each statistic keeps three bins of `N` residuals. When the monitoring
//! clock `t` hits a multiple of `N` the oldest bin is dropped and a fresh
//! one opened, so the statistic at time `t` covers the last
//! `M = 2N + (t mod N) + 1` residuals (between `2N + 1` and `3N`). Before
//! enough residuals have been seen the missing slots count as zero.
//!
//! With residuals `e_1..e_M` of the current window (oldest first):
//!
//! ```text
//! J = (e_1 + ... + e_M) / M
//! K = (1 e_1 + 2 e_2 + ... + M e_M) / (M (M + 1) (2M + 1) / 6)
//! ```
//!
//! The weighted sum is rebuilt from per-bin sums `S_b` and within-bin
//! weighted sums `W_b` as `W_1 + W_2 + W_3 + N S_2 + 2N S_3`.
//!
//! A jump alarm is raised when `|J| >= rho_J`, otherwise a kink alarm when
//! `|K| >= rho_K`. The first alarm stops the detector.

use rayon::prelude::*;

use crate::prechange::{Baseline, KnownPrechange, PrechangeFit, PrechangeLine, TimeScale};
use crate::signal_model::ChangeKind;
use crate::{FlocError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Jump bin size `N_J`; `None` disables the jump statistic.
    pub jump_bin: Option<usize>,
    /// Kink bin size `N_K`; `None` disables the kink statistic.
    pub kink_bin: Option<usize>,
    /// Jump threshold; `f64::INFINITY` computes the statistic but never alarms.
    pub rho_jump: f64,
    pub rho_kink: f64,
}

impl DetectorConfig {
    pub fn both(bin: usize, rho_jump: f64, rho_kink: f64) -> Self {
        Self {
            jump_bin: Some(bin),
            kink_bin: Some(bin),
            rho_jump,
            rho_kink,
        }
    }

    pub fn jump_only(bin: usize, rho_jump: f64) -> Self {
        Self {
            jump_bin: Some(bin),
            kink_bin: None,
            rho_jump,
            rho_kink: f64::INFINITY,
        }
    }

    pub fn kink_only(bin: usize, rho_kink: f64) -> Self {
        Self {
            jump_bin: None,
            kink_bin: Some(bin),
            rho_jump: f64::INFINITY,
            rho_kink,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.jump_bin.is_none() && self.kink_bin.is_none() {
            return Err(FlocError::invalid("both statistics are disabled"));
        }
        for (name, bin) in [("jump", self.jump_bin), ("kink", self.kink_bin)] {
            if bin == Some(0) {
                return Err(FlocError::invalid(format!("{name} bin size must be at least 1")));
            }
        }
        for (name, rho) in [("jump", self.rho_jump), ("kink", self.rho_kink)] {
            if !(rho > 0.0) {
                return Err(FlocError::invalid(format!(
                    "{name} threshold must be positive, got {rho}"
                )));
            }
        }
        Ok(())
    }

    /// Same bins with both thresholds at infinity.
    pub fn silenced(&self) -> Self {
        Self {
            rho_jump: f64::INFINITY,
            rho_kink: f64::INFINITY,
            ..*self
        }
    }

    pub fn can_alarm(&self) -> bool {
        (self.jump_bin.is_some() && self.rho_jump.is_finite())
            || (self.kink_bin.is_some() && self.rho_kink.is_finite())
    }
}

/// Three rolling bins of residual sums and within-bin weighted sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinTriple {
    sums: [f64; 3],
    weighted: [f64; 3],
    bin_size: usize,
    position: usize,
}

impl BinTriple {
    pub fn new(bin_size: usize) -> Self {
        assert!(bin_size >= 1, "bin size must be positive");
        Self {
            sums: [0.0; 3],
            weighted: [0.0; 3],
            bin_size,
            position: 0,
        }
    }

    pub fn bin_size(&self) -> usize {
        self.bin_size
    }

    /// Position `r = t mod N` inside the current bin.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn sums(&self) -> [f64; 3] {
        self.sums
    }

    pub fn weighted_sums(&self) -> [f64; 3] {
        self.weighted
    }

    /// Adds the residual observed at monitoring clock `t`.
    pub fn push(&mut self, t: u64, residual: f64) {
        let r = (t % self.bin_size as u64) as usize;
        if r == 0 {
            self.sums = [self.sums[1], self.sums[2], 0.0];
            self.weighted = [self.weighted[1], self.weighted[2], 0.0];
        }
        self.position = r;
        self.sums[2] += residual;
        self.weighted[2] += (r + 1) as f64 * residual;
    }

    /// Current window length `2N + r + 1`.
    pub fn window(&self) -> usize {
        2 * self.bin_size + self.position + 1
    }

    pub fn jump_stat(&self) -> f64 {
        (self.sums[0] + self.sums[1] + self.sums[2]) / self.window() as f64
    }

    pub fn kink_stat(&self) -> f64 {
        let n = self.bin_size as f64;
        let numerator = self.weighted[0]
            + self.weighted[1]
            + self.weighted[2]
            + n * self.sums[1]
            + 2.0 * n * self.sums[2];
        numerator / kink_normalizer(self.window())
    }
}

/// `M (M + 1) (2M + 1) / 6`, the sum of squared weights of a length-`M` window.
pub fn kink_normalizer(window: usize) -> f64 {
    let m = window as u128;
    (m * (m + 1) * (2 * m + 1) / 6) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    /// Absolute index of the alarming observation.
    pub time: usize,
    /// Monitoring clock at the alarm (`time - k`).
    pub clock: u64,
    pub kind: ChangeKind,
    pub stat_value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    Monitoring,
    Stopped(DetectionEvent),
}

/// Statistic values after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSnapshot {
    pub t: u64,
    pub index: usize,
    pub residual: f64,
    /// `|J|`, absent when the jump statistic is disabled.
    pub j_stat: Option<f64>,
    /// `|K|`, absent when the kink statistic is disabled.
    pub k_stat: Option<f64>,
    pub window_jump: Option<usize>,
    pub window_kink: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub snapshot: StatSnapshot,
    pub event: Option<DetectionEvent>,
}

/// Full detector state. Its size does not depend on how many observations
/// have been processed.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    config: DetectorConfig,
    baseline: Baseline,
    offset: usize,
    clock: u64,
    jump_bins: Option<BinTriple>,
    kink_bins: Option<BinTriple>,
    status: Status,
}

impl Detector {
    /// Starts monitoring at absolute index `offset + 1`.
    pub fn new(config: DetectorConfig, baseline: Baseline, offset: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            baseline,
            offset,
            clock: 0,
            jump_bins: config.jump_bin.map(BinTriple::new),
            kink_bins: config.kink_bin.map(BinTriple::new),
            status: Status::Monitoring,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn baseline(&self) -> &Baseline {
        &self.baseline
    }

    /// Index of the last historical observation.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Number of monitored observations so far.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn jump_bins(&self) -> Option<&BinTriple> {
        self.jump_bins.as_ref()
    }

    pub fn kink_bins(&self) -> Option<&BinTriple> {
        self.kink_bins.as_ref()
    }

    pub fn step(&mut self, x: f64) -> Result<StepOutcome> {
        if let Status::Stopped(event) = self.status {
            return Err(FlocError::Stopped(event.time));
        }
        if !x.is_finite() {
            return Err(FlocError::invalid(format!("non-finite observation {x}")));
        }
        self.clock += 1;
        let t = self.clock;
        let index = self.offset + t as usize;
        let residual = x - self.baseline.predict_index(index);

        let mut j_stat = None;
        let mut window_jump = None;
        if let Some(bins) = self.jump_bins.as_mut() {
            bins.push(t, residual);
            j_stat = Some(bins.jump_stat().abs());
            window_jump = Some(bins.window());
        }
        let mut k_stat = None;
        let mut window_kink = None;
        if let Some(bins) = self.kink_bins.as_mut() {
            bins.push(t, residual);
            k_stat = Some(bins.kink_stat().abs());
            window_kink = Some(bins.window());
        }

        let event = match (j_stat, k_stat) {
            (Some(j), _) if j >= self.config.rho_jump => Some((ChangeKind::Jump, j, self.config.rho_jump)),
            (_, Some(k)) if k >= self.config.rho_kink => Some((ChangeKind::Kink, k, self.config.rho_kink)),
            _ => None,
        }
        .map(|(kind, stat_value, threshold)| DetectionEvent {
            time: index,
            clock: t,
            kind,
            stat_value,
            threshold,
        });
        if let Some(ev) = event {
            self.status = Status::Stopped(ev);
        }

        Ok(StepOutcome {
            snapshot: StatSnapshot {
                t,
                index,
                residual,
                j_stat,
                k_stat,
                window_jump,
                window_kink,
            },
            event,
        })
    }
}

/// How the pre-change line is obtained for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrechangeMode {
    /// Least squares on the historical block, in the given time scale.
    Fit(TimeScale),
    Known(KnownPrechange),
}

impl PrechangeMode {
    pub fn baseline(&self, history: &[f64]) -> Result<Baseline> {
        match self {
            PrechangeMode::Fit(scale) => Ok(Baseline::Fitted(PrechangeFit::fit_ols(history, *scale)?)),
            PrechangeMode::Known(line) => Ok(Baseline::Known(*line)),
        }
    }

    pub fn time_scale(&self) -> TimeScale {
        match self {
            PrechangeMode::Fit(scale) => *scale,
            PrechangeMode::Known(line) => line.time_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub event: Option<DetectionEvent>,
    /// Length of the processed series.
    pub horizon: usize,
    pub baseline: Baseline,
    pub trace: Option<Vec<StatSnapshot>>,
}

impl RunOutcome {
    pub fn detected(&self) -> bool {
        self.event.is_some()
    }

    /// Alarm index, or the horizon when nothing was detected.
    pub fn alarm_time(&self) -> usize {
        self.event.map_or(self.horizon, |e| e.time)
    }
}

fn check_history(len: usize, k: usize, mode: &PrechangeMode) -> Result<()> {
    if len <= k {
        return Err(FlocError::invalid(format!(
            "series of length {len} leaves nothing to monitor after {k} historical observations"
        )));
    }
    if matches!(mode, PrechangeMode::Fit(_)) && k < 2 {
        return Err(FlocError::InsufficientData { needed: 2, got: k });
    }
    Ok(())
}

/// Estimates (or accepts) the pre-change line on `series[..k]` and monitors
/// the rest until the first alarm.
pub fn run(
    series: &[f64],
    k: usize,
    config: &DetectorConfig,
    mode: &PrechangeMode,
    keep_trace: bool,
) -> Result<RunOutcome> {
    check_history(series.len(), k, mode)?;
    let baseline = mode.baseline(&series[..k])?;
    let mut detector = Detector::new(*config, baseline, k)?;
    let mut trace = keep_trace.then(Vec::new);
    let mut event = None;
    for &x in &series[k..] {
        let out = detector.step(x)?;
        if let Some(trace) = trace.as_mut() {
            trace.push(out.snapshot);
        }
        if out.event.is_some() {
            event = out.event;
            break;
        }
    }
    Ok(RunOutcome {
        event,
        horizon: series.len(),
        baseline,
        trace,
    })
}

/// Several independent detectors on one stream sharing a pre-change line.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleDetector {
    scales: Vec<Detector>,
    stopped: Option<(usize, DetectionEvent)>,
}

impl MultiScaleDetector {
    pub fn new(configs: &[DetectorConfig], baseline: Baseline, offset: usize) -> Result<Self> {
        if configs.is_empty() {
            return Err(FlocError::invalid("at least one scale is required"));
        }
        let scales = configs
            .iter()
            .map(|c| Detector::new(*c, baseline, offset))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scales,
            stopped: None,
        })
    }

    pub fn scales(&self) -> &[Detector] {
        &self.scales
    }

    /// Steps every scale; on simultaneous alarms the first listed scale wins.
    pub fn step(&mut self, x: f64) -> Result<(Vec<StatSnapshot>, Option<(usize, DetectionEvent)>)> {
        if let Some((_, event)) = self.stopped {
            return Err(FlocError::Stopped(event.time));
        }
        let mut snapshots = Vec::with_capacity(self.scales.len());
        let mut first = None;
        for (i, det) in self.scales.iter_mut().enumerate() {
            let out = det.step(x)?;
            snapshots.push(out.snapshot);
            if first.is_none() {
                first = out.event.map(|e| (i, e));
            }
        }
        self.stopped = first;
        Ok((snapshots, first))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRunOutcome {
    /// Scale index and event of the first alarm.
    pub event: Option<(usize, DetectionEvent)>,
    pub horizon: usize,
    pub baseline: Baseline,
}

impl MultiRunOutcome {
    pub fn alarm_time(&self) -> usize {
        self.event.map_or(self.horizon, |(_, e)| e.time)
    }
}

pub fn multi_bin_run(
    series: &[f64],
    k: usize,
    configs: &[DetectorConfig],
    mode: &PrechangeMode,
) -> Result<MultiRunOutcome> {
    check_history(series.len(), k, mode)?;
    let baseline = mode.baseline(&series[..k])?;
    let mut detector = MultiScaleDetector::new(configs, baseline, k)?;
    let mut event = None;
    for &x in &series[k..] {
        let (_, ev) = detector.step(x)?;
        if ev.is_some() {
            event = ev;
            break;
        }
    }
    Ok(MultiRunOutcome {
        event,
        horizon: series.len(),
        baseline,
    })
}

/// Runs many independent series in parallel; results keep input order.
pub fn run_batch(
    series: &[Vec<f64>],
    k: usize,
    config: &DetectorConfig,
    mode: &PrechangeMode,
) -> Result<Vec<RunOutcome>> {
    series
        .par_iter()
        .map(|s| run(s, k, config, mode, false))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremTarget {
    Jump,
    Kink,
    Both,
}

fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9 * x.abs()).ceil().max(1.0) as usize
}

/// Bin sizes and thresholds with the asymptotic rate guarantees, for a
/// horizon `n` and historical fraction `c = k / n`.
///
/// `N_J = ceil(1000 ln n / (2 c^2))`, `rho_J = 4c / 5`,
/// `N_K = ceil((300 / c^2)^(1/3) n^(2/3) ln(n)^(1/3))`, `rho_K = 4c / (5n)`.
///
/// The thresholds are calibrated for unit-variance noise and residuals of
/// a line fitted in [`TimeScale::Fraction`]`(n)`.
pub fn theorem_scale_config(n: f64, c: f64, target: TheoremTarget) -> Result<DetectorConfig> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(FlocError::invalid(format!("rate constant must lie in (0, 1], got {c}")));
    }
    if !(n > 1.0) || !n.is_finite() {
        return Err(FlocError::invalid(format!("horizon must exceed 1, got {n}")));
    }
    let log_n = n.ln();
    let jump_bin = ceil_tolerant(1e3 * log_n / (2.0 * c * c));
    let kink_bin = ceil_tolerant((300.0 / (c * c)).cbrt() * n.powf(2.0 / 3.0) * log_n.cbrt());
    let rho_jump = 4.0 * c / 5.0;
    let rho_kink = 4.0 * c / (5.0 * n);
    let config = match target {
        TheoremTarget::Jump => DetectorConfig::jump_only(jump_bin, rho_jump),
        TheoremTarget::Kink => DetectorConfig::kink_only(kink_bin, rho_kink),
        TheoremTarget::Both => DetectorConfig {
            jump_bin: Some(jump_bin),
            kink_bin: Some(kink_bin),
            rho_jump,
            rho_kink,
        },
    };
    Ok(config)
}

// Snapshot encoding
//
// Version 1, little endian, fixed length (SNAPSHOT_LEN bytes):
//
//   magic "FLOC" | version u16
//   config:   flags u8 (bit0 jump, bit1 kink) | jump_bin u64 | kink_bin u64 | rho_jump f64 | rho_kink f64
//   baseline: tag u8 (0 fitted, 1 known) | scale tag u8 (0 index, 1 fraction) | scale n u64
//             count u64 | 5 x f64 (fitted: mean_t mean_x ss_tt ss_tx ss_xx; known: alpha beta 0 0 0)
//   offset u64 | clock u64
//   jump bins: 3 x f64 sums | 3 x f64 weighted | position u64
//   kink bins: same layout (zeros when disabled)
//   status:   tag u8 (0 monitoring, 1 stopped) | time u64 | clock u64 | kind u8 | stat f64 | threshold f64
//
// Floats are stored as raw IEEE-754 bits, so decoding is bit-exact.

const SNAPSHOT_MAGIC: &[u8; 4] = b"FLOC";
pub const SNAPSHOT_VERSION: u16 = 1;
pub const SNAPSHOT_LEN: usize = 4 + 2 + (1 + 8 * 4) + (2 + 8 + 8 + 8 * 5) + 16 + 2 * (8 * 7) + (1 + 8 + 8 + 1 + 16);

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| FlocError::Decode("truncated snapshot".into()))?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| FlocError::Decode("integer overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

fn write_scale(w: &mut Writer, scale: TimeScale) {
    match scale {
        TimeScale::Index => {
            w.u8(0);
            w.u64(0);
        }
        TimeScale::Fraction(n) => {
            w.u8(1);
            w.u64(n as u64);
        }
    }
}

fn write_bins(w: &mut Writer, bins: Option<&BinTriple>) {
    let b = bins.copied().unwrap_or(BinTriple {
        sums: [0.0; 3],
        weighted: [0.0; 3],
        bin_size: 1,
        position: 0,
    });
    b.sums.iter().for_each(|v| w.f64(*v));
    b.weighted.iter().for_each(|v| w.f64(*v));
    w.u64(b.position as u64);
}

fn read_bins(r: &mut Reader<'_>, bin_size: Option<usize>) -> Result<Option<BinTriple>> {
    let mut sums = [0.0; 3];
    let mut weighted = [0.0; 3];
    for v in sums.iter_mut() {
        *v = r.f64()?;
    }
    for v in weighted.iter_mut() {
        *v = r.f64()?;
    }
    let position = r.usize()?;
    Ok(bin_size.map(|bin_size| BinTriple {
        sums,
        weighted,
        bin_size,
        position,
    }))
}

impl Detector {
    /// Encodes the full state in the fixed-length version-1 layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(SNAPSHOT_LEN));
        w.0.extend_from_slice(SNAPSHOT_MAGIC);
        w.0.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());

        let c = &self.config;
        w.u8(c.jump_bin.is_some() as u8 | (c.kink_bin.is_some() as u8) << 1);
        w.u64(c.jump_bin.unwrap_or(0) as u64);
        w.u64(c.kink_bin.unwrap_or(0) as u64);
        w.f64(c.rho_jump);
        w.f64(c.rho_kink);

        match &self.baseline {
            Baseline::Fitted(fit) => {
                w.u8(0);
                write_scale(&mut w, fit.time_scale());
                let (count, parts) = fit.centred_parts();
                w.u64(count as u64);
                parts.iter().for_each(|v| w.f64(*v));
            }
            Baseline::Known(line) => {
                w.u8(1);
                write_scale(&mut w, line.time_scale);
                w.u64(0);
                [line.alpha, line.beta, 0.0, 0.0, 0.0].iter().for_each(|v| w.f64(*v));
            }
        }

        w.u64(self.offset as u64);
        w.u64(self.clock);
        write_bins(&mut w, self.jump_bins.as_ref());
        write_bins(&mut w, self.kink_bins.as_ref());

        match self.status {
            Status::Monitoring => {
                w.u8(0);
                w.u64(0);
                w.u64(0);
                w.u8(0);
                w.f64(0.0);
                w.f64(0.0);
            }
            Status::Stopped(ev) => {
                w.u8(1);
                w.u64(ev.time as u64);
                w.u64(ev.clock);
                w.u8(match ev.kind {
                    ChangeKind::Jump => 0,
                    ChangeKind::Kink => 1,
                });
                w.f64(ev.stat_value);
                w.f64(ev.threshold);
            }
        }
        debug_assert_eq!(w.0.len(), SNAPSHOT_LEN);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != SNAPSHOT_LEN {
            return Err(FlocError::Decode(format!(
                "expected {SNAPSHOT_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(FlocError::Decode("bad magic".into()));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(FlocError::Decode(format!("unsupported version {version}")));
        }

        let flags = r.u8()?;
        let jump_bin = r.usize()?;
        let kink_bin = r.usize()?;
        let config = DetectorConfig {
            jump_bin: (flags & 1 != 0).then_some(jump_bin),
            kink_bin: (flags & 2 != 0).then_some(kink_bin),
            rho_jump: r.f64()?,
            rho_kink: r.f64()?,
        };
        config.validate().map_err(|e| FlocError::Decode(e.to_string()))?;

        let baseline_tag = r.u8()?;
        let scale = match (r.u8()?, r.usize()?) {
            (0, _) => TimeScale::Index,
            (1, n) => TimeScale::Fraction(n),
            (tag, _) => return Err(FlocError::Decode(format!("bad time scale tag {tag}"))),
        };
        let count = r.usize()?;
        let mut parts = [0.0; 5];
        for v in parts.iter_mut() {
            *v = r.f64()?;
        }
        let baseline = match baseline_tag {
            0 => Baseline::Fitted(
                PrechangeFit::from_centred_parts(scale, count, parts)
                    .map_err(|e| FlocError::Decode(e.to_string()))?,
            ),
            1 => Baseline::Known(KnownPrechange::new(parts[0], parts[1], scale)),
            tag => return Err(FlocError::Decode(format!("bad baseline tag {tag}"))),
        };

        let offset = r.usize()?;
        let clock = r.u64()?;
        let jump_bins = read_bins(&mut r, config.jump_bin)?;
        let kink_bins = read_bins(&mut r, config.kink_bin)?;

        let status_tag = r.u8()?;
        let time = r.usize()?;
        let ev_clock = r.u64()?;
        let kind = match r.u8()? {
            0 => ChangeKind::Jump,
            1 => ChangeKind::Kink,
            tag => return Err(FlocError::Decode(format!("bad change kind tag {tag}"))),
        };
        let stat_value = r.f64()?;
        let threshold = r.f64()?;
        let status = match status_tag {
            0 => Status::Monitoring,
            1 => Status::Stopped(DetectionEvent {
                time,
                clock: ev_clock,
                kind,
                stat_value,
                threshold,
            }),
            tag => return Err(FlocError::Decode(format!("bad status tag {tag}"))),
        };

        Ok(Self {
            config,
            baseline,
            offset,
            clock,
            jump_bins,
            kink_bins,
            status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{generate_series, NoiseSpec, SignalParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_line() -> Baseline {
        Baseline::Known(KnownPrechange::new(0.0, 0.0, TimeScale::Index))
    }

    /// Window statistics evaluated directly from every stored residual.
    fn brute_force(residuals: &[f64], bin: usize) -> (f64, f64, usize) {
        let t = residuals.len();
        let m = 2 * bin + t % bin + 1;
        let window: Vec<f64> = (1..=m)
            .map(|i| {
                let clock = t as i64 - m as i64 + i as i64;
                if clock >= 1 {
                    residuals[clock as usize - 1]
                } else {
                    0.0
                }
            })
            .collect();
        let j = window.iter().sum::<f64>() / m as f64;
        let squares: f64 = (1..=m).map(|i| (i * i) as f64).sum();
        let k = window
            .iter()
            .enumerate()
            .map(|(i, e)| (i + 1) as f64 * e)
            .sum::<f64>()
            / squares;
        (j, k, m)
    }

    #[test]
    fn zero_residuals_never_alarm() {
        let mut det = Detector::new(DetectorConfig::both(3, 0.1, 0.01), zero_line(), 0).unwrap();
        for _ in 0..100 {
            let out = det.step(0.0).unwrap();
            assert_eq!(out.snapshot.j_stat, Some(0.0));
            assert_eq!(out.snapshot.k_stat, Some(0.0));
            assert!(out.event.is_none());
        }
    }

    #[test]
    fn unit_bins_hand_trace() {
        // N_J = 1: r = 0 on every step, window 3, zero padded at the start.
        let a = 2.0;
        let mut det = Detector::new(DetectorConfig::jump_only(1, f64::INFINITY), zero_line(), 0).unwrap();
        let j: Vec<f64> = (0..4).map(|_| det.step(a).unwrap().snapshot.j_stat.unwrap()).collect();
        assert_eq!(j, vec![a / 3.0, 2.0 * a / 3.0, a, a]);
    }

    #[test]
    fn kink_normalizer_is_sum_of_squares() {
        let mut acc: u128 = 0;
        for m in 1..=1_000_000u128 {
            acc += m * m;
            if m % 9973 == 0 || m <= 100 || m == 1_000_000 {
                let d = kink_normalizer(m as usize);
                assert_eq!(d, acc as f64, "M = {m}");
            }
        }
    }

    #[test]
    fn rotation_window_bounds() {
        for bin in 1..8 {
            let mut det = Detector::new(DetectorConfig::both(bin, f64::INFINITY, f64::INFINITY), zero_line(), 0).unwrap();
            for t in 1..=(6 * bin as u64) {
                let s = det.step(1.0).unwrap().snapshot;
                let w = s.window_jump.unwrap();
                assert!(w >= 2 * bin + 1 && w <= 3 * bin);
                let r = (t % bin as u64) as usize;
                assert_eq!(det.jump_bins().unwrap().position(), r);
                if r == 0 {
                    assert_eq!(w, 2 * bin + 1);
                }
                if r == bin - 1 {
                    assert_eq!(w, 3 * bin);
                }
            }
        }
    }

    #[test]
    fn step_after_stop_is_rejected() {
        let mut det = Detector::new(DetectorConfig::jump_only(1, 0.5), zero_line(), 10).unwrap();
        let ev = det.step(5.0).unwrap().event.unwrap();
        assert_eq!(ev.time, 11);
        assert_eq!(ev.kind, ChangeKind::Jump);
        assert!(ev.stat_value >= ev.threshold);
        assert_eq!(det.step(0.0), Err(FlocError::Stopped(11)));
    }

    #[test]
    fn jump_wins_ties() {
        let mut det = Detector::new(DetectorConfig::both(1, 0.1, 0.01), zero_line(), 0).unwrap();
        let out = det.step(10.0).unwrap();
        assert!(out.snapshot.k_stat.unwrap() >= 0.01);
        assert_eq!(out.event.unwrap().kind, ChangeKind::Jump);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut det = Detector::new(DetectorConfig::both(2, 1.0, 1.0), zero_line(), 0).unwrap();
        assert!(det.step(f64::NAN).is_err());
        assert_eq!(det.clock(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig { jump_bin: None, kink_bin: None, rho_jump: 1.0, rho_kink: 1.0 }.validate().is_err());
        assert!(DetectorConfig::both(0, 1.0, 1.0).validate().is_err());
        assert!(DetectorConfig::both(2, 0.0, 1.0).validate().is_err());
        assert!(DetectorConfig::both(2, f64::NAN, 1.0).validate().is_err());
        assert!(DetectorConfig::both(2, f64::INFINITY, 1.0).validate().is_ok());
    }

    #[test]
    fn noiseless_jump_detected_within_three_bins() {
        let n = 1000;
        let theta = SignalParams::new(0.5, 0.0, 1.0, 0.0, 0.0);
        let s = generate_series(&theta, n, &NoiseSpec::Gaussian { sigma: 0.0 }, 0).unwrap();
        let mode = PrechangeMode::Known(KnownPrechange::new(0.0, 0.0, TimeScale::Index));
        let out = run(&s.values, 300, &DetectorConfig::jump_only(5, 0.5), &mode, false).unwrap();
        let ev = out.event.unwrap();
        let change = theta.change_index(n);
        assert_eq!(ev.kind, ChangeKind::Jump);
        assert!(ev.time > change && ev.time <= change + 15, "alarm {}", ev.time);
        // Deterministic trace: with d post-change residuals of 1 in the window
        // J = d / M; d = 5 gives 5/11, d = 6 gives 6/12 = 0.5.
        assert_eq!(ev.time, 506);
    }

    #[test]
    fn no_change_no_detection() {
        let theta = SignalParams::new(0.5, 1.0, 1.0, 3.0, 3.0);
        let s = generate_series(&theta, 600, &NoiseSpec::Gaussian { sigma: 0.0 }, 0).unwrap();
        let out = run(&s.values, 100, &DetectorConfig::both(4, 1e-6, 1e-8), &PrechangeMode::Fit(TimeScale::Index), false).unwrap();
        assert!(!out.detected());
        assert_eq!(out.alarm_time(), 600);
    }

    #[test]
    fn kink_only_reports_kink() {
        let theta = SignalParams::change_after(2000, 1000, 0.0, 0.05);
        let s = generate_series(&theta, 2000, &NoiseSpec::Gaussian { sigma: 0.0 }, 0).unwrap();
        let out = run(&s.values, 500, &DetectorConfig::kink_only(5, 0.05), &PrechangeMode::Fit(TimeScale::Index), false).unwrap();
        let ev = out.event.unwrap();
        assert_eq!(ev.kind, ChangeKind::Kink);
        assert!(ev.time > 1000);
    }

    #[test]
    fn run_argument_errors() {
        let s = vec![0.0; 10];
        let cfg = DetectorConfig::both(2, 1.0, 1.0);
        assert!(run(&s, 10, &cfg, &PrechangeMode::Fit(TimeScale::Index), false).is_err());
        assert!(run(&s, 1, &cfg, &PrechangeMode::Fit(TimeScale::Index), false).is_err());
        let known = PrechangeMode::Known(KnownPrechange::new(0.0, 0.0, TimeScale::Index));
        assert!(run(&s, 0, &cfg, &known, false).is_ok());
    }

    #[test]
    fn trace_matches_stepwise_snapshots() {
        let s = generate_series(&SignalParams::constant(0.0), 400, &NoiseSpec::standard(), 3).unwrap();
        let cfg = DetectorConfig::both(7, f64::INFINITY, f64::INFINITY);
        let mode = PrechangeMode::Fit(TimeScale::Index);
        let out = run(&s.values, 100, &cfg, &mode, true).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace.len(), 300);
        let mut det = Detector::new(cfg, out.baseline, 100).unwrap();
        for (snap, &x) in trace.iter().zip(&s.values[100..]) {
            assert_eq!(*snap, det.step(x).unwrap().snapshot);
        }
    }

    #[test]
    fn snapshot_roundtrip_is_bit_exact() {
        let s = generate_series(&SignalParams::constant(0.0), 500, &NoiseSpec::standard(), 8).unwrap();
        let fit = PrechangeFit::fit_ols(&s.values[..100], TimeScale::Fraction(500)).unwrap();
        let mut det = Detector::new(
            DetectorConfig { jump_bin: Some(3), kink_bin: Some(11), rho_jump: f64::INFINITY, rho_kink: 5.0 },
            Baseline::Fitted(fit),
            100,
        )
        .unwrap();
        for &x in &s.values[100..250] {
            det.step(x).unwrap();
        }
        let bytes = det.to_bytes();
        assert_eq!(bytes.len(), SNAPSHOT_LEN);
        let mut restored = Detector::from_bytes(&bytes).unwrap();
        assert_eq!(restored, det);
        assert_eq!(restored.to_bytes(), bytes);
        for &x in &s.values[250..] {
            let a = det.step(x).unwrap();
            let b = restored.step(x).unwrap();
            assert_eq!(a.snapshot.j_stat.map(f64::to_bits), b.snapshot.j_stat.map(f64::to_bits));
            assert_eq!(a.snapshot.k_stat.map(f64::to_bits), b.snapshot.k_stat.map(f64::to_bits));
        }

        let mut stopped = Detector::new(DetectorConfig::kink_only(2, 0.1), zero_line(), 0).unwrap();
        stopped.step(9.0).unwrap();
        let back = Detector::from_bytes(&stopped.to_bytes()).unwrap();
        assert_eq!(back, stopped);
        assert!(matches!(back.status(), Status::Stopped(_)));
    }

    #[test]
    fn snapshot_rejects_garbage() {
        let det = Detector::new(DetectorConfig::both(2, 1.0, 1.0), zero_line(), 0).unwrap();
        let mut bytes = det.to_bytes();
        assert!(Detector::from_bytes(&bytes[..10]).is_err());
        bytes[0] = b'X';
        assert!(Detector::from_bytes(&bytes).is_err());
    }

    #[test]
    fn theorem_scale_plug_in() {
        let e = std::f64::consts::E;
        let cfg = theorem_scale_config(e, 1.0, TheoremTarget::Both).unwrap();
        assert_eq!(cfg.jump_bin, Some(500));
        assert!((cfg.rho_jump - 0.8).abs() < 1e-15);
        assert!((cfg.rho_kink - 0.8 / e).abs() < 1e-15);
        assert_eq!(cfg.kink_bin, Some((300f64.cbrt() * e.powf(2.0 / 3.0)).ceil() as usize));
        let cfg = theorem_scale_config(e, 0.5, TheoremTarget::Both).unwrap();
        assert_eq!(cfg.jump_bin, Some(2000));
        assert!(theorem_scale_config(100.0, 0.0, TheoremTarget::Jump).is_err());
        assert!(theorem_scale_config(100.0, 1.5, TheoremTarget::Jump).is_err());
        assert!(theorem_scale_config(1.0, 0.5, TheoremTarget::Jump).is_err());
        let jump = theorem_scale_config(100.0, 0.5, TheoremTarget::Jump).unwrap();
        assert!(jump.kink_bin.is_none());
    }

    #[test]
    fn theorem_scale_kink_bin_shape() {
        let c = 0.3;
        let ratios: Vec<f64> = [1e3, 1e4, 1e5, 1e6]
            .iter()
            .map(|&n: &f64| {
                let cfg = theorem_scale_config(n, c, TheoremTarget::Kink).unwrap();
                cfg.kink_bin.unwrap() as f64 / (n.powf(2.0 / 3.0) * n.ln().cbrt())
            })
            .collect();
        for r in &ratios {
            assert!((r / ratios[3] - 1.0).abs() < 0.01, "{ratios:?}");
        }
    }

    #[test]
    fn multi_bin_single_scale_equals_run() {
        for seed in 0..20 {
            let theta = SignalParams::change_after(1500, 1000, 0.8, 0.0);
            let s = generate_series(&theta, 1500, &NoiseSpec::standard(), seed).unwrap();
            let cfg = DetectorConfig::both(10, 0.7, 0.05);
            let mode = PrechangeMode::Fit(TimeScale::Index);
            let single = run(&s.values, 500, &cfg, &mode, false).unwrap();
            let multi = multi_bin_run(&s.values, 500, &[cfg], &mode).unwrap();
            assert_eq!(multi.event.map(|(_, e)| e), single.event);
            // An extra scale that can never fire changes nothing.
            let muted = multi_bin_run(&s.values, 500, &[cfg, DetectorConfig::both(40, f64::INFINITY, f64::INFINITY)], &mode).unwrap();
            assert_eq!(muted.event, multi.event);
            let small = DetectorConfig::both(2, 1.5, 0.3);
            let two = multi_bin_run(&s.values, 500, &[small, cfg.silenced()], &mode).unwrap();
            let alone = run(&s.values, 500, &small, &mode, false).unwrap();
            assert_eq!(two.event.map(|(_, e)| e), alone.event);
        }
    }

    #[test]
    fn multi_bin_requires_scales() {
        let s = vec![0.0; 20];
        assert!(multi_bin_run(&s, 5, &[], &PrechangeMode::Fit(TimeScale::Index)).is_err());
    }

    #[test]
    fn appended_suffix_does_not_move_alarm() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = SignalParams::change_after(2000, 1000, 1.0, 0.0);
        let s = generate_series(&theta, 2000, &NoiseSpec::standard(), 4).unwrap();
        let cfg = DetectorConfig::both(10, 0.66, 0.05);
        let mode = PrechangeMode::Fit(TimeScale::Index);
        let base = run(&s.values, 1000, &cfg, &mode, false).unwrap();
        let t = base.alarm_time();
        let mut extended = s.values[..t].to_vec();
        extended.extend((0..500).map(|_| rng.random_range(-50.0..50.0)));
        let again = run(&extended, 1000, &cfg, &mode, false).unwrap();
        assert_eq!(again.event, base.event);
    }

    proptest! {
        #[test]
        fn incremental_matches_window_sums(bin_j in 1usize..=50, bin_k in 1usize..=50, seed in any::<u64>(), frac in 0.1f64..=1.0) {
            let len = ((10 * bin_j.max(bin_k)) as f64 * frac).ceil() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = DetectorConfig { jump_bin: Some(bin_j), kink_bin: Some(bin_k), rho_jump: f64::INFINITY, rho_kink: f64::INFINITY };
            let mut det = Detector::new(cfg, zero_line(), 0).unwrap();
            let mut residuals = Vec::with_capacity(len);
            for _ in 0..len {
                let x: f64 = rng.random_range(-3.0..3.0);
                residuals.push(x);
                let snap = det.step(x).unwrap().snapshot;
                let (j, _, mj) = brute_force(&residuals, bin_j);
                let (_, k, mk) = brute_force(&residuals, bin_k);
                prop_assert_eq!(snap.window_jump, Some(mj));
                prop_assert_eq!(snap.window_kink, Some(mk));
                let abs_j: f64 = residuals.iter().rev().take(mj).map(|e| e.abs()).sum::<f64>() / mj as f64;
                prop_assert!((snap.j_stat.unwrap() - j.abs()).abs() <= 1e-12 * abs_j.max(j.abs()));
                let abs_k: f64 = residuals.iter().rev().take(mk).map(|e| e.abs()).sum::<f64>() * mk as f64 / kink_normalizer(mk);
                prop_assert!((snap.k_stat.unwrap() - k.abs()).abs() <= 1e-12 * abs_k.max(k.abs()));
            }
        }
    }
}
