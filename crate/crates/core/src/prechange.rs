//! Pre-change line estimation.
//!
//! The historical block `X_1..X_k` is regressed on its design times by
//! ordinary least squares. Sufficient statistics are held in centred form
//! (running means plus centred second moments), so a fit can absorb one
//! more observation in constant time and remains accurate for large `k`.

use crate::{FlocError, Result};

/// How observation indices map to regression times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeScale {
    /// `t = i`.
    Index,
    /// `t = i / n` for a fixed horizon `n`.
    Fraction(usize),
}

impl TimeScale {
    pub fn time_of(&self, index: usize) -> f64 {
        match *self {
            TimeScale::Index => index as f64,
            TimeScale::Fraction(n) => index as f64 / n as f64,
        }
    }
}

/// Written `index` or `fraction:<n>`.
impl std::fmt::Display for TimeScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeScale::Index => f.write_str("index"),
            TimeScale::Fraction(n) => write!(f, "fraction:{n}"),
        }
    }
}

impl std::str::FromStr for TimeScale {
    type Err = FlocError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("index") => Ok(TimeScale::Index),
            Some((name, n)) if name.eq_ignore_ascii_case("fraction") => match n.trim().parse() {
                Ok(n) if n > 0 => Ok(TimeScale::Fraction(n)),
                _ => Err(FlocError::invalid(format!("bad horizon in time scale `{s}`"))),
            },
            _ => Err(FlocError::invalid(format!("unknown time scale `{s}`"))),
        }
    }
}

/// Anything that predicts the pre-change signal.
pub trait PrechangeLine {
    fn time_scale(&self) -> TimeScale;

    /// Fitted value at time `t` of the line's own time scale.
    fn predict(&self, t: f64) -> f64;

    /// Fitted value at observation `index`.
    fn predict_index(&self, index: usize) -> f64 {
        self.predict(self.time_scale().time_of(index))
    }
}

/// Least-squares intercept and slope together with their sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrechangeFit {
    alpha_hat: f64,
    beta_hat: f64,
    time_scale: TimeScale,
    count: usize,
    mean_t: f64,
    mean_x: f64,
    ss_tt: f64,
    ss_tx: f64,
    ss_xx: f64,
}

/// Raw (uncentred) sums `(count, Σt, Σt², Σx, Σtx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSums {
    pub count: usize,
    pub sum_t: f64,
    pub sum_tt: f64,
    pub sum_x: f64,
    pub sum_tx: f64,
}

impl PrechangeFit {
    /// Fits the line to `values`, observation `i` (1-based) sitting at
    /// `time_scale.time_of(i)`.
    pub fn fit_ols(values: &[f64], time_scale: TimeScale) -> Result<Self> {
        Self::from_points(
            values
                .iter()
                .enumerate()
                .map(|(i, &x)| (time_scale.time_of(i + 1), x)),
            time_scale,
        )
    }

    /// Fits the line to arbitrary `(t, x)` points.
    pub fn from_points<I>(points: I, time_scale: TimeScale) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut acc = Self::empty(time_scale);
        for (t, x) in points {
            acc.accumulate(x, t);
        }
        if acc.count < 2 {
            return Err(FlocError::InsufficientData {
                needed: 2,
                got: acc.count,
            });
        }
        acc.solve()?;
        Ok(acc)
    }

    fn empty(time_scale: TimeScale) -> Self {
        Self {
            alpha_hat: 0.0,
            beta_hat: 0.0,
            time_scale,
            count: 0,
            mean_t: 0.0,
            mean_x: 0.0,
            ss_tt: 0.0,
            ss_tx: 0.0,
            ss_xx: 0.0,
        }
    }

    fn accumulate(&mut self, x: f64, t: f64) {
        self.count += 1;
        let n = self.count as f64;
        let dt = t - self.mean_t;
        let dx = x - self.mean_x;
        self.mean_t += dt / n;
        self.mean_x += dx / n;
        self.ss_tt += dt * (t - self.mean_t);
        self.ss_tx += dt * (x - self.mean_x);
        self.ss_xx += dx * (x - self.mean_x);
    }

    fn solve(&mut self) -> Result<()> {
        let scale = self.mean_t * self.mean_t * self.count as f64;
        if !(self.ss_tt > 1e-14 * scale) || self.ss_tt <= 0.0 {
            return Err(FlocError::SingularDesign);
        }
        self.beta_hat = self.ss_tx / self.ss_tt;
        self.alpha_hat = self.mean_x - self.beta_hat * self.mean_t;
        Ok(())
    }

    /// Folds one more observation into the fit in constant time.
    pub fn update(&mut self, x_new: f64, t_new: f64) {
        self.accumulate(x_new, t_new);
        // A valid fit has a non-degenerate design, and adding a point cannot
        // shrink the spread of the times.
        self.solve().expect("design stays non-degenerate");
    }

    /// Value-returning form of [`PrechangeFit::update`].
    pub fn update_sequential(&self, x_new: f64, t_new: f64) -> Self {
        let mut next = *self;
        next.update(x_new, t_new);
        next
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha_hat
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    /// Number of observations in the fit.
    pub fn k(&self) -> usize {
        self.count
    }

    pub fn raw_sums(&self) -> RawSums {
        let n = self.count as f64;
        RawSums {
            count: self.count,
            sum_t: n * self.mean_t,
            sum_tt: self.ss_tt + n * self.mean_t * self.mean_t,
            sum_x: n * self.mean_x,
            sum_tx: self.ss_tx + n * self.mean_t * self.mean_x,
        }
    }

    /// `(count, mean_t, mean_x, ss_tt, ss_tx, ss_xx)` in centred form.
    pub(crate) fn centred_parts(&self) -> (usize, [f64; 5]) {
        (
            self.count,
            [self.mean_t, self.mean_x, self.ss_tt, self.ss_tx, self.ss_xx],
        )
    }

    pub(crate) fn from_centred_parts(
        time_scale: TimeScale,
        count: usize,
        parts: [f64; 5],
    ) -> Result<Self> {
        let [mean_t, mean_x, ss_tt, ss_tx, ss_xx] = parts;
        let mut fit = Self {
            count,
            mean_t,
            mean_x,
            ss_tt,
            ss_tx,
            ss_xx,
            ..Self::empty(time_scale)
        };
        if count < 2 {
            return Err(FlocError::InsufficientData { needed: 2, got: count });
        }
        fit.solve()?;
        Ok(fit)
    }

    pub fn residual_sum_of_squares(&self) -> f64 {
        (self.ss_xx - self.ss_tx * self.ss_tx / self.ss_tt).max(0.0)
    }

    /// `sqrt(RSS / (k - 2))`, or zero when `k = 2`.
    pub fn resid_sd(&self) -> f64 {
        if self.count < 3 {
            0.0
        } else {
            (self.residual_sum_of_squares() / (self.count - 2) as f64).sqrt()
        }
    }
}

impl PrechangeLine for PrechangeFit {
    fn time_scale(&self) -> TimeScale {
        self.time_scale
    }

    fn predict(&self, t: f64) -> f64 {
        self.alpha_hat + self.beta_hat * t
    }
}

/// A pre-change line supplied by the caller instead of estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownPrechange {
    pub alpha: f64,
    pub beta: f64,
    pub time_scale: TimeScale,
}

impl KnownPrechange {
    pub fn new(alpha: f64, beta: f64, time_scale: TimeScale) -> Self {
        Self {
            alpha,
            beta,
            time_scale,
        }
    }
}

impl PrechangeLine for KnownPrechange {
    fn time_scale(&self) -> TimeScale {
        self.time_scale
    }

    fn predict(&self, t: f64) -> f64 {
        self.alpha + self.beta * t
    }
}

/// Either an estimated or a known pre-change line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Fitted(PrechangeFit),
    Known(KnownPrechange),
}

impl Baseline {
    pub fn intercept(&self) -> f64 {
        match self {
            Baseline::Fitted(f) => f.alpha_hat(),
            Baseline::Known(k) => k.alpha,
        }
    }

    pub fn slope(&self) -> f64 {
        match self {
            Baseline::Fitted(f) => f.beta_hat(),
            Baseline::Known(k) => k.beta,
        }
    }
}

impl PrechangeLine for Baseline {
    fn time_scale(&self) -> TimeScale {
        match self {
            Baseline::Fitted(f) => f.time_scale(),
            Baseline::Known(k) => k.time_scale(),
        }
    }

    fn predict(&self, t: f64) -> f64 {
        match self {
            Baseline::Fitted(f) => f.predict(t),
            Baseline::Known(k) => k.predict(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation (denominator `k - 1`) of a historical block.
pub fn historical_moments(history: &[f64]) -> Result<(f64, f64)> {
    if history.len() < 2 {
        return Err(FlocError::InsufficientData {
            needed: 2,
            got: history.len(),
        });
    }
    let n = history.len() as f64;
    let mean = history.iter().sum::<f64>() / n;
    let var = history.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(FlocError::DegenerateScale);
    }
    Ok((mean, sd))
}

/// Rescales `values` by the mean and standard deviation of its first `k` entries.
pub fn standardize(values: &[f64], k: usize) -> Result<Standardized> {
    if k > values.len() {
        return Err(FlocError::invalid(format!(
            "historical length {k} exceeds series length {}",
            values.len()
        )));
    }
    let (mean, sd) = historical_moments(&values[..k])?;
    Ok(Standardized {
        values: values.iter().map(|x| (x - mean) / sd).collect(),
        mean,
        sd,
    })
}
