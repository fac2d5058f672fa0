//! Segmented linear signals, change classification and synthetic series.
//!
//! A signal is parametrised on the unit interval: observation `i` of a
//! series of horizon `n` sits at design point `i / n`, and the change
//! location `tau` is a fraction of the horizon. The point `i / n == tau`
//! belongs to the pre-change segment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};

use crate::{FlocError, Result};

/// Name of the generator behind every seeded draw, recorded in reports.
pub const PRNG_NAME: &str = "chacha8/splitmix64-v1";

/// The change parameters `(tau, alpha_minus, alpha_plus, beta_minus, beta_plus)`.
///
/// `alpha_*` are the signal values of each segment's line at `tau` and
/// `beta_*` their slopes per unit of the design interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalParams {
    pub tau: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub beta_minus: f64,
    pub beta_plus: f64,
}

/// Lower bound `delta0` on both the change location margin and the change size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeSpace {
    delta0: f64,
}

impl ChangeSpace {
    pub fn new(delta0: f64) -> Result<Self> {
        if !(delta0 > 0.0 && delta0 < 0.5) {
            return Err(FlocError::invalid(format!(
                "delta0 must lie in (0, 1/2), got {delta0}"
            )));
        }
        Ok(Self { delta0 })
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangeKind {
    Jump,
    Kink,
}

impl ChangeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChangeKind::Jump => "jump",
            ChangeKind::Kink => "kink",
        }
    }
}

impl std::fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChangeKind {
    type Err = FlocError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jump" => Ok(ChangeKind::Jump),
            "kink" => Ok(ChangeKind::Kink),
            other => Err(FlocError::invalid(format!("unknown change kind `{other}`"))),
        }
    }
}

impl SignalParams {
    pub fn new(tau: f64, alpha_minus: f64, alpha_plus: f64, beta_minus: f64, beta_plus: f64) -> Self {
        Self {
            tau,
            alpha_minus,
            alpha_plus,
            beta_minus,
            beta_plus,
        }
    }

    /// A signal without any change, constant at `level`.
    pub fn constant(level: f64) -> Self {
        Self::new(0.5, level, level, 0.0, 0.0)
    }

    /// Zero pre-change line with a change right after observation
    /// `change_index` of a horizon-`n` series. `slope_change` is given per
    /// observation and converted to design-interval units.
    pub fn change_after(n: usize, change_index: usize, jump: f64, slope_change: f64) -> Self {
        Self::new(
            change_index as f64 / n as f64,
            0.0,
            jump,
            0.0,
            slope_change * n as f64,
        )
    }

    /// Signal value at design point `x`, extrapolating linearly outside `[0, 1]`.
    pub fn value_at(&self, x: f64) -> f64 {
        if x <= self.tau {
            self.beta_minus * (x - self.tau) + self.alpha_minus
        } else {
            self.beta_plus * (x - self.tau) + self.alpha_plus
        }
    }

    /// Index of the last pre-change observation, `ceil(n * tau)` up to
    /// floating-point noise in the product.
    pub fn change_index(&self, n: usize) -> usize {
        let pos = self.tau * n as f64;
        let rounded = pos.round();
        if (pos - rounded).abs() <= 1e-9 * pos.abs().max(1.0) {
            rounded.max(0.0) as usize
        } else {
            pos.ceil().max(0.0) as usize
        }
    }

    /// Checks membership in the parameter space bounded by `space`.
    pub fn validate(&self, space: &ChangeSpace) -> Result<()> {
        let d = space.delta0();
        if !(self.tau >= d && self.tau <= 1.0 - d) {
            return Err(FlocError::invalid(format!(
                "tau = {} outside [{d}, {}]",
                self.tau,
                1.0 - d
            )));
        }
        let size = (self.alpha_plus - self.alpha_minus)
            .abs()
            .max((self.beta_plus - self.beta_minus).abs());
        if size < d {
            return Err(FlocError::invalid(format!(
                "change size {size} below delta0 = {d}"
            )));
        }
        Ok(())
    }

    /// Kind of the change ignoring any minimum magnitude: a jump whenever the
    /// levels differ, a kink when only the slopes do.
    pub fn nominal_kind(&self) -> Option<ChangeKind> {
        if self.alpha_plus != self.alpha_minus {
            Some(ChangeKind::Jump)
        } else if self.beta_plus != self.beta_minus {
            Some(ChangeKind::Kink)
        } else {
            None
        }
    }
}

/// Value of the signal at observation `i` of a horizon-`n` series.
pub fn eval_signal(theta: &SignalParams, i: usize, n: usize) -> Result<f64> {
    if n == 0 || i == 0 || i > n {
        return Err(FlocError::invalid(format!(
            "index {i} outside 1..={n}"
        )));
    }
    Ok(theta.value_at(i as f64 / n as f64))
}

/// Jump when the level change reaches `delta0`, kink when only the slope
/// change does, `None` otherwise.
pub fn classify_change(theta: &SignalParams, space: &ChangeSpace) -> Option<ChangeKind> {
    let d = space.delta0();
    if (theta.alpha_plus - theta.alpha_minus).abs() >= d {
        Some(ChangeKind::Jump)
    } else if (theta.beta_plus - theta.beta_minus).abs() >= d {
        Some(ChangeKind::Kink)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    /// Raw Student-t draws with `df` degrees of freedom, not rescaled to unit variance.
    StudentT { df: f64 },
}

impl NoiseSpec {
    pub fn standard() -> Self {
        NoiseSpec::Gaussian { sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            // sigma = 0 is accepted and yields noiseless series.
            NoiseSpec::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            NoiseSpec::Gaussian { sigma } => Err(FlocError::invalid(format!(
                "gaussian sigma must be finite and non-negative, got {sigma}"
            ))),
            NoiseSpec::StudentT { df } if df.is_finite() && df > 0.0 => Ok(()),
            NoiseSpec::StudentT { df } => Err(FlocError::invalid(format!(
                "student-t degrees of freedom must be finite and positive, got {df}"
            ))),
        }
    }

    pub fn sampler(&self, seed: u64) -> Result<NoiseSampler> {
        self.validate()?;
        let kind = match *self {
            NoiseSpec::Gaussian { sigma } => SamplerKind::Gaussian(sigma),
            NoiseSpec::StudentT { df } => SamplerKind::StudentT(
                StudentT::new(df).map_err(|e| FlocError::invalid(e.to_string()))?,
            ),
        };
        Ok(NoiseSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            kind,
        })
    }
}

/// Written `gaussian:<sigma>` or `t:<df>`.
impl std::fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseSpec::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseSpec::StudentT { df } => write!(f, "t:{df}"),
        }
    }
}

impl std::str::FromStr for NoiseSpec {
    type Err = FlocError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let value = |default: f64| -> Result<f64> {
            if arg.is_empty() {
                Ok(default)
            } else {
                arg.trim()
                    .parse()
                    .map_err(|_| FlocError::invalid(format!("bad noise parameter in `{s}`")))
            }
        };
        let spec = match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => NoiseSpec::Gaussian { sigma: value(1.0)? },
            "t" | "student_t" if !arg.is_empty() => NoiseSpec::StudentT { df: value(f64::NAN)? },
            _ => return Err(FlocError::invalid(format!("unknown noise `{s}`, expected gaussian:<sigma> or t:<df>"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gaussian(f64),
    StudentT(StudentT<f64>),
}

/// Seeded stream of noise draws.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    rng: ChaCha8Rng,
    kind: SamplerKind,
}

impl NoiseSampler {
    pub fn draw(&mut self) -> f64 {
        match &self.kind {
            SamplerKind::Gaussian(sigma) => {
                if *sigma == 0.0 {
                    0.0
                } else {
                    let z: f64 = self.rng.sample(StandardNormal);
                    sigma * z
                }
            }
            SamplerKind::StudentT(dist) => self.rng.sample(dist),
        }
    }
}

/// Endless observation stream `X_i = f(i / n) + noise_i`, `i = 1, 2, ...`.
///
/// Indices past `n` extrapolate the post-change line.
#[derive(Debug, Clone)]
pub struct SignalStream {
    theta: SignalParams,
    n: usize,
    next: usize,
    noise: NoiseSampler,
}

impl SignalStream {
    pub fn new(theta: SignalParams, n: usize, noise: &NoiseSpec, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(FlocError::invalid("horizon must be at least 1"));
        }
        Ok(Self {
            theta,
            n,
            next: 1,
            noise: noise.sampler(seed)?,
        })
    }
}

impl Iterator for SignalStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let i = self.next;
        self.next += 1;
        let signal = self.theta.value_at(i as f64 / self.n as f64);
        Some(signal + self.noise.draw())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub values: Vec<f64>,
    pub n: usize,
    pub truth: SignalParams,
    pub seed: u64,
}

pub fn generate_series(
    theta: &SignalParams,
    n: usize,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<SyntheticSeries> {
    let values: Vec<f64> = SignalStream::new(*theta, n, noise, seed)?.take(n).collect();
    Ok(SyntheticSeries {
        values,
        n,
        truth: *theta,
        seed,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`: two rounds of SplitMix64
/// over the pair. Each seed then drives its own ChaCha8 stream.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
