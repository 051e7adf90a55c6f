//! Confidence intervals on a Bernoulli mean from an observed count.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    /// Chernoff–Hoeffding relative-entropy bound, inverted numerically.
    #[default]
    Chernoff,
    /// Normal approximation with the observed variance.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.low <= v && v <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

const REL_TOL: f64 = 1e-12;

/// Interval on the success probability of `trials` Bernoulli draws that
/// produced `count` successes. Each side fails with probability at most
/// `per_obs_failure / 2`.
///
/// Counts are real-valued so that expected counts can be analysed as if
/// observed.
pub fn bound_mean(count: f64, trials: f64, per_obs_failure: f64) -> Result<Interval> {
    bound_mean_with(count, trials, per_obs_failure, BoundMethod::Chernoff)
}

pub fn bound_mean_with(
    count: f64,
    trials: f64,
    per_obs_failure: f64,
    method: BoundMethod,
) -> Result<Interval> {
    ensure(trials > 0.0 && trials.is_finite(), "trials", || {
        format!("must be positive, got {trials}")
    })?;
    ensure(count >= 0.0, "count", || {
        format!("must be >= 0, got {count}")
    })?;
    ensure(count <= trials, "count", || {
        format!("count {count} exceeds trials {trials}")
    })?;
    ensure(
        per_obs_failure > 0.0 && per_obs_failure < 1.0,
        "per_obs_failure",
        || format!("must lie in (0, 1), got {per_obs_failure}"),
    )?;

    let side = 0.5 * per_obs_failure;
    let mean = count / trials;
    Ok(match method {
        BoundMethod::Chernoff => {
            let budget = (1.0 / side).ln() / trials;
            Interval {
                low: chernoff_low(mean, budget),
                high: chernoff_high(mean, budget),
            }
        }
        BoundMethod::Gaussian => {
            let z = Normal::new(0.0, 1.0)
                .expect("standard normal")
                .inverse_cdf(1.0 - side);
            let half = z * (mean * (1.0 - mean) / trials).sqrt();
            Interval {
                low: (mean - half).max(0.0),
                high: (mean + half).min(1.0),
            }
        }
    })
}

/// Relative entropy `D(a‖b)` between Bernoulli distributions, in nats.
pub(crate) fn bernoulli_kl(a: f64, b: f64) -> f64 {
    let first = if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    let second = if a < 1.0 {
        (1.0 - a) * ((-a).ln_1p() - (-b).ln_1p())
    } else {
        0.0
    };
    first + second
}

/// Largest `p ≥ mean` with `D(mean‖p) ≤ budget`.
fn chernoff_high(mean: f64, budget: f64) -> f64 {
    if mean >= 1.0 {
        return 1.0;
    }
    if bernoulli_kl(mean, 1.0 - f64::EPSILON) <= budget {
        return 1.0;
    }
    // Upper end of the bracket: when mean = 0, D = −ln(1−p) ≈ p.
    let (mut lo, mut hi) = (mean, 1.0);
    bisect(&mut lo, &mut hi, |p| bernoulli_kl(mean, p) <= budget);
    lo
}

/// Smallest `p ≤ mean` with `D(mean‖p) ≤ budget`.
fn chernoff_low(mean: f64, budget: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if bernoulli_kl(mean, f64::MIN_POSITIVE) <= budget {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, mean);
    bisect(&mut lo, &mut hi, |p| bernoulli_kl(mean, p) > budget);
    hi
}

/// Shrinks `[lo, hi]` keeping `inside(lo)` true and `inside(hi)` false.
fn bisect(lo: &mut f64, hi: &mut f64, inside: impl Fn(f64) -> bool) {
    for _ in 0..2000 {
        if *hi - *lo <= REL_TOL * hi.abs() {
            break;
        }
        // Geometric midpoint while the bracket spans orders of magnitude.
        let mid = if *lo > 0.0 && *hi / *lo > 4.0 {
            (*lo * *hi).sqrt()
        } else if *lo == 0.0 && *hi > 1e-300 {
            (*hi * 1e-3).max(0.5 * *hi * f64::EPSILON).min(0.5 * *hi)
        } else {
            0.5 * (*lo + *hi)
        };
        if inside(mid) {
            *lo = mid;
        } else {
            *hi = mid;
        }
    }
}

/// Lower bound on a Poisson-binomial count whose mean is `mean`, failing with
/// probability at most `failure` (multiplicative Chernoff lower tail).
pub fn count_lower(mean: f64, failure: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    (mean - (2.0 * mean * (1.0 / failure).ln()).sqrt()).max(0.0)
}
