//! Monte Carlo threshold calibration.
//!
//! Thresholds are tuned on simulated change-free streams. Each replication
//! fits the pre-change line on `k` historical draws, monitors the next
//! `horizon - 1` observations with every threshold at infinity, and keeps
//! the largest `|J|` and `|K|` it saw. A threshold equal to the upper
//! `eta`-quantile of those maxima then yields a false-alarm probability of
//! about `eta` before observation `k + horizon`.
//!
//! When several statistics are monitored together (jump and kink, or
//! several bin sizes), all of them are set to a common marginal level
//! `eta'`, found by bisection so that the probability that *any* of them
//! fires equals `eta`.
//!
//! Replication `i` draws from its own generator seeded by
//! [`replication_seed`]`(master_seed, i)`, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

use crate::detector::{Detector, DetectorConfig, PrechangeMode};
use crate::prechange::{KnownPrechange, PrechangeLine};
use crate::signal_model::{replication_seed, ChangeKind, NoiseSpec};
use crate::{FlocError, Result};

/// Level that turns a false-alarm calibration into an average-run-length one,
/// assuming approximately exponential run lengths.
pub const ARL_ETA: f64 = 1.0 - 1.0 / std::f64::consts::E;

/// Tolerance on the common marginal level in joint calibration.
pub const BISECTION_TOLERANCE: f64 = 1e-4;

/// Bin sizes of a detector whose thresholds are still to be chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BinLayout {
    pub jump_bin: Option<usize>,
    pub kink_bin: Option<usize>,
}

impl BinLayout {
    pub fn both(bin: usize) -> Self {
        Self {
            jump_bin: Some(bin),
            kink_bin: Some(bin),
        }
    }

    pub fn jump(bin: usize) -> Self {
        Self {
            jump_bin: Some(bin),
            kink_bin: None,
        }
    }

    pub fn kink(bin: usize) -> Self {
        Self {
            jump_bin: None,
            kink_bin: Some(bin),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.jump_bin.is_none() && self.kink_bin.is_none()
    }

    pub fn with_thresholds(&self, rho_jump: f64, rho_kink: f64) -> DetectorConfig {
        DetectorConfig {
            jump_bin: self.jump_bin,
            kink_bin: self.kink_bin,
            rho_jump,
            rho_kink,
        }
    }

    fn channels(&self) -> impl Iterator<Item = ChangeKind> {
        [
            self.jump_bin.map(|_| ChangeKind::Jump),
            self.kink_bin.map(|_| ChangeKind::Kink),
        ]
        .into_iter()
        .flatten()
    }
}

impl From<&DetectorConfig> for BinLayout {
    fn from(c: &DetectorConfig) -> Self {
        Self {
            jump_bin: c.jump_bin,
            kink_bin: c.kink_bin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSpec {
    pub replications: usize,
    /// Target false-alarm probability.
    pub eta: f64,
    /// Observation after the history at which the change would occur; the
    /// indices `k + 1 .. k + horizon - 1` are monitored.
    pub horizon: usize,
    pub k: usize,
    pub layout: BinLayout,
    pub noise: NoiseSpec,
    pub prechange: PrechangeMode,
    pub master_seed: u64,
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(FlocError::invalid("at least one replication is required"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(FlocError::invalid(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.horizon == 0 {
            return Err(FlocError::invalid("horizon must be at least 1"));
        }
        if self.layout.is_empty() {
            return Err(FlocError::invalid("no statistic to calibrate"));
        }
        if matches!(self.prechange, PrechangeMode::Fit(_)) && self.k < 2 {
            return Err(FlocError::InsufficientData { needed: 2, got: self.k });
        }
        self.noise.validate()
    }
}

/// Largest `|J|` and `|K|` of one null replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPair {
    pub jump: Option<f64>,
    pub kink: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub rho_jump: f64,
    pub rho_kink: f64,
    pub eta: f64,
    /// Common marginal level; equals `eta` for a single statistic.
    pub eta_marginal: f64,
    /// Fraction of calibration replications that would have alarmed.
    pub empirical_fa: f64,
    pub fa_jump: Option<f64>,
    pub fa_kink: Option<f64>,
    pub spec: CalibrationSpec,
    pub maxima: Vec<MaxPair>,
}

impl CalibrationResult {
    pub fn config(&self) -> DetectorConfig {
        self.spec.layout.with_thresholds(self.rho_jump, self.rho_kink)
    }
}

/// Value of the pre-change signal the null streams follow.
pub(crate) fn null_line(mode: &PrechangeMode) -> KnownPrechange {
    match mode {
        // Fitted residuals do not depend on the true line, so zero will do.
        PrechangeMode::Fit(scale) => KnownPrechange::new(0.0, 0.0, *scale),
        PrechangeMode::Known(line) => *line,
    }
}

/// One null replication: per layout, the maxima of its enabled statistics.
fn null_replication(spec: &CalibrationSpec, layouts: &[BinLayout], index: u64) -> Result<Vec<MaxPair>> {
    let line = null_line(&spec.prechange);
    let mut noise = spec.noise.sampler(replication_seed(spec.master_seed, index))?;
    let history: Vec<f64> = (1..=spec.k)
        .map(|i| line.predict_index(i) + noise.draw())
        .collect();
    let baseline = spec.prechange.baseline(&history)?;

    let mut detectors = layouts
        .iter()
        .map(|l| {
            if l.is_empty() {
                Ok(None)
            } else {
                Detector::new(l.with_thresholds(f64::INFINITY, f64::INFINITY), baseline, spec.k).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut maxima: Vec<MaxPair> = layouts
        .iter()
        .map(|l| MaxPair {
            jump: l.jump_bin.map(|_| 0.0),
            kink: l.kink_bin.map(|_| 0.0),
        })
        .collect();

    for t in 1..spec.horizon {
        let x = line.predict_index(spec.k + t) + noise.draw();
        for (det, max) in detectors.iter_mut().zip(maxima.iter_mut()) {
            let Some(det) = det else { continue };
            let snap = det.step(x)?.snapshot;
            if let (Some(m), Some(j)) = (max.jump.as_mut(), snap.j_stat) {
                *m = m.max(j);
            }
            if let (Some(m), Some(k)) = (max.kink.as_mut(), snap.k_stat) {
                *m = m.max(k);
            }
        }
    }
    Ok(maxima)
}

fn simulate_layouts(spec: &CalibrationSpec, layouts: &[BinLayout]) -> Result<Vec<Vec<MaxPair>>> {
    spec.validate()?;
    (0..spec.replications as u64)
        .into_par_iter()
        .map(|i| null_replication(spec, layouts, i))
        .collect()
}

/// Per-replication maxima of `|J|` and `|K|` over the monitored null window.
pub fn simulate_null_maxima(spec: &CalibrationSpec) -> Result<Vec<MaxPair>> {
    Ok(simulate_layouts(spec, &[spec.layout])?
        .into_iter()
        .map(|mut v| v.remove(0))
        .collect())
}

/// The `ceil((1 - eta) r)`-th smallest of `samples`, clamped to `1..=r`.
pub fn upper_quantile(samples: &[f64], eta: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, eta)
}

fn quantile_sorted(sorted: &[f64], eta: f64) -> f64 {
    let r = sorted.len();
    assert!(r > 0, "empty sample");
    let pos = (1.0 - eta) * r as f64;
    let j = ((pos - 1e-9 * pos.abs()).ceil() as usize).clamp(1, r);
    sorted[j - 1]
}

/// Fraction of `samples` at or above `threshold`.
pub fn exceedance(samples: &[f64], threshold: f64) -> f64 {
    samples.iter().filter(|&&m| m >= threshold).count() as f64 / samples.len() as f64
}

/// Fraction of replications in which any channel reaches its threshold.
pub fn union_exceedance(channels: &[Vec<f64>], thresholds: &[f64]) -> f64 {
    let r = channels.first().map_or(0, Vec::len);
    if r == 0 {
        return 0.0;
    }
    let hits = (0..r)
        .filter(|&i| channels.iter().zip(thresholds).any(|(c, &rho)| c[i] >= rho))
        .count();
    hits as f64 / r as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub eta_marginal: f64,
    pub thresholds: Vec<f64>,
    pub union_fa: f64,
    pub marginal_fa: Vec<f64>,
    pub iterations: usize,
}

/// Picks one marginal level shared by all channels so that the union
/// exceedance is as large as possible without passing `eta`.
///
/// `channels[c][i]` is the maximum of channel `c` in replication `i`.
pub fn equalize_channels(channels: &[Vec<f64>], eta: f64) -> Result<JointSolution> {
    if channels.is_empty() {
        return Err(FlocError::invalid("no channels to calibrate"));
    }
    let r = channels[0].len();
    if r == 0 || channels.iter().any(|c| c.len() != r) {
        return Err(FlocError::invalid("channels must share a non-empty replication count"));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(FlocError::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    if eta * (r as f64) < 1.0 {
        return Err(FlocError::CalibrationResolution { eta, replications: r });
    }
    let sorted: Vec<Vec<f64>> = channels
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let thresholds_at = |level: f64| -> Vec<f64> { sorted.iter().map(|s| quantile_sorted(s, level)).collect() };

    // The union exceedance is non-decreasing in the marginal level and is at
    // least the marginal exceedance, so at `eta` it is already >= eta.
    let (mut lo, mut hi) = (0.0_f64, eta);
    let mut iterations = 0;
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if union_exceedance(channels, &thresholds_at(mid)) <= eta {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let thresholds = thresholds_at(lo);
    Ok(JointSolution {
        eta_marginal: lo,
        union_fa: union_exceedance(channels, &thresholds),
        marginal_fa: channels
            .iter()
            .zip(&thresholds)
            .map(|(c, &rho)| exceedance(c, rho))
            .collect(),
        thresholds,
        iterations,
    })
}

/// False-alarm fraction of a pair of thresholds on a fixed maxima sample.
pub fn empirical_fa(maxima: &[MaxPair], rho_jump: f64, rho_kink: f64) -> f64 {
    let hits = maxima
        .iter()
        .filter(|m| m.jump.is_some_and(|j| j >= rho_jump) || m.kink.is_some_and(|k| k >= rho_kink))
        .count();
    hits as f64 / maxima.len().max(1) as f64
}

fn channel(maxima: &[MaxPair], kind: ChangeKind) -> Option<Vec<f64>> {
    maxima
        .iter()
        .map(|m| match kind {
            ChangeKind::Jump => m.jump,
            ChangeKind::Kink => m.kink,
        })
        .collect()
}

/// Calibrates one statistic to the upper `eta`-quantile of its null maxima;
/// the other threshold is set to infinity.
pub fn calibrate_single(spec: &CalibrationSpec, which: ChangeKind) -> Result<CalibrationResult> {
    let enabled = match which {
        ChangeKind::Jump => spec.layout.jump_bin.is_some(),
        ChangeKind::Kink => spec.layout.kink_bin.is_some(),
    };
    if !enabled {
        return Err(FlocError::invalid(format!("the {which} statistic is disabled in the layout")));
    }
    let maxima = simulate_null_maxima(spec)?;
    let samples = channel(&maxima, which).expect("enabled channel has samples");
    let rho = upper_quantile(&samples, spec.eta);
    let fa = exceedance(&samples, rho);
    let (rho_jump, rho_kink) = match which {
        ChangeKind::Jump => (rho, f64::INFINITY),
        ChangeKind::Kink => (f64::INFINITY, rho),
    };
    Ok(CalibrationResult {
        rho_jump,
        rho_kink,
        eta: spec.eta,
        eta_marginal: spec.eta,
        empirical_fa: fa,
        fa_jump: channel(&maxima, ChangeKind::Jump).map(|c| exceedance(&c, rho_jump)),
        fa_kink: channel(&maxima, ChangeKind::Kink).map(|c| exceedance(&c, rho_kink)),
        spec: *spec,
        maxima,
    })
}

/// Calibrates jump and kink together: both at a common marginal level whose
/// union false-alarm fraction matches `eta`.
pub fn calibrate_joint(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    if spec.layout.jump_bin.is_none() || spec.layout.kink_bin.is_none() {
        return Err(FlocError::invalid("joint calibration needs both statistics enabled"));
    }
    let maxima = simulate_null_maxima(spec)?;
    let jump = channel(&maxima, ChangeKind::Jump).expect("jump enabled");
    let kink = channel(&maxima, ChangeKind::Kink).expect("kink enabled");
    let sol = equalize_channels(&[jump, kink], spec.eta)?;
    Ok(CalibrationResult {
        rho_jump: sol.thresholds[0],
        rho_kink: sol.thresholds[1],
        eta: spec.eta,
        eta_marginal: sol.eta_marginal,
        empirical_fa: sol.union_fa,
        fa_jump: Some(sol.marginal_fa[0]),
        fa_kink: Some(sol.marginal_fa[1]),
        spec: *spec,
        maxima,
    })
}

/// Joint calibration when both statistics are enabled, single otherwise.
pub fn calibrate(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    match (spec.layout.jump_bin, spec.layout.kink_bin) {
        (Some(_), Some(_)) => calibrate_joint(spec),
        (Some(_), None) => calibrate_single(spec, ChangeKind::Jump),
        (None, Some(_)) => calibrate_single(spec, ChangeKind::Kink),
        (None, None) => Err(FlocError::invalid("no statistic to calibrate")),
    }
}

/// Targets an average run length of `spec.horizon` by calibrating the
/// false-alarm probability before `horizon` to `1 - 1/e`.
pub fn calibrate_arl(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    calibrate(&CalibrationSpec { eta: ARL_ETA, ..*spec })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleThresholds {
    pub layout: BinLayout,
    pub rho_jump: f64,
    pub rho_kink: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiCalibration {
    pub scales: Vec<ScaleThresholds>,
    pub eta_marginal: f64,
    pub empirical_fa: f64,
}

impl MultiCalibration {
    /// One detector per non-empty scale.
    pub fn detector_configs(&self) -> Vec<DetectorConfig> {
        self.scales
            .iter()
            .filter(|s| !s.layout.is_empty())
            .map(|s| s.layout.with_thresholds(s.rho_jump, s.rho_kink))
            .collect()
    }
}

/// Calibrates every statistic of every scale to a common marginal level.
/// `spec.layout` is ignored in favour of `scales`; empty layouts keep
/// infinite thresholds.
pub fn calibrate_multi_bin(spec: &CalibrationSpec, scales: &[BinLayout]) -> Result<MultiCalibration> {
    if scales.iter().all(BinLayout::is_empty) {
        return Err(FlocError::invalid("at least one non-empty scale is required"));
    }
    let probe = CalibrationSpec {
        layout: *scales.iter().find(|l| !l.is_empty()).expect("checked above"),
        ..*spec
    };
    let per_rep = simulate_layouts(&probe, scales)?;

    let mut index = Vec::new();
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for (s, layout) in scales.iter().enumerate() {
        for kind in layout.channels() {
            index.push((s, kind));
            channels.push(
                per_rep
                    .iter()
                    .map(|rep| match kind {
                        ChangeKind::Jump => rep[s].jump.expect("enabled"),
                        ChangeKind::Kink => rep[s].kink.expect("enabled"),
                    })
                    .collect(),
            );
        }
    }
    let sol = equalize_channels(&channels, spec.eta)?;

    let mut out: Vec<ScaleThresholds> = scales
        .iter()
        .map(|&layout| ScaleThresholds {
            layout,
            rho_jump: f64::INFINITY,
            rho_kink: f64::INFINITY,
        })
        .collect();
    for ((s, kind), rho) in index.into_iter().zip(sol.thresholds) {
        match kind {
            ChangeKind::Jump => out[s].rho_jump = rho,
            ChangeKind::Kink => out[s].rho_kink = rho,
        }
    }
    Ok(MultiCalibration {
        scales: out,
        eta_marginal: sol.eta_marginal,
        empirical_fa: sol.union_fa,
    })
}
