//! Small statistics helpers shared by the simulator and analysis code.

use statrs::function::erf::erfc;

/// Two-sided confidence interval, clamped to the quantity's natural range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// True when the two intervals share no point.
    pub fn disjoint_from(&self, other: &Interval) -> bool {
        self.hi < other.lo || other.hi < self.lo
    }
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Wilson score interval for a binomial proportion.
///
/// With zero trials the estimate is vacuous and the full `[0, 1]` interval is
/// returned rather than an error, so sparse counters stay composable.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Interval { lo: (center - half).max(0.0), hi: (center + half).min(1.0) }
}

/// Streaming accumulator for a sample mean with a normal-approximation CI.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &RunningMean) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Unbiased sample variance; NaN below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    /// `mean +- z * s / sqrt(n)`; the full real line below two samples.
    pub fn mean_interval(&self, z: f64) -> Interval {
        if self.n < 2 {
            return Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
        }
        let half = z * (self.variance() / self.n as f64).sqrt();
        let m = self.mean();
        Interval { lo: m - half, hi: m + half }
    }
}

/// Angle wrapped into `[0, 2*pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut t = theta % tau;
    if t < 0.0 {
        t += tau;
    }
    // The remainder of a value just below zero can round to tau itself.
    if t >= tau {
        t = 0.0;
    }
    t
}

/// Shorter arc length between two angles, in `[0, pi]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(std::f64::consts::TAU - d)
}

/// Circular mean direction of `angles`, wrapped to `[0, 2*pi)`; NaN for an
/// empty slice or a resultant vector of length zero.
pub fn circular_mean(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return f64::NAN;
    }
    let (s, c) = angles
        .iter()
        .fold((0.0f64, 0.0f64), |(s, c), &a| (s + a.sin(), c + a.cos()));
    if s.hypot(c) < 1e-12 * angles.len() as f64 {
        return f64::NAN;
    }
    wrap_angle(s.atan2(c))
}
