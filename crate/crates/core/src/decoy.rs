//! Decoy-state estimation of the single-photon-pair yield `s11` and error
//! rate `e11`, and the resulting secret key.
//!
//! Every X-basis gain and error-gain is bracketed by an independent
//! concentration bound. A linear program over the photon-number-resolved
//! yields then finds the smallest `s11` and the largest error-yield `t11`
//! compatible with all brackets at once. The failure probability ε is split
//! across the fourteen brackets and the lower bound on the number of
//! single-photon-pair events in the key-generating `zz` data.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::lp::{Row, YieldProgram};
use crate::model::{
    expected_observables, h2, poisson, poisson_tail, ExpectedObservables, Label, ProtocolParams,
    SystemSpec,
};
use crate::simkit::SourcePairStats;
use crate::stats::{bound_mean_with, count_lower, BoundMethod, Interval};

/// Number of bounded observables: seven gains, seven error-gains, and the
/// single-photon-pair count.
pub const BOUNDED_OBSERVABLES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// ε / 15 for every bounded observable.
    EqualSplit,
    /// Fractions of ε for the gain, error-gain and count groups; each group
    /// is shared equally among its members.
    Weighted { gains: f64, errors: f64, n11: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationPolicy {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub method: BoundMethod,
    #[serde(default = "default_budget_rule")]
    pub budget_rule: BudgetRule,
}

fn default_epsilon() -> f64 {
    1e-10
}
fn default_budget_rule() -> BudgetRule {
    BudgetRule::EqualSplit
}

impl Default for FluctuationPolicy {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            method: BoundMethod::Chernoff,
            budget_rule: default_budget_rule(),
        }
    }
}

/// Failure probability assigned to each bounded observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub per_gain: f64,
    pub per_error_gain: f64,
    pub n11: f64,
    pub total: f64,
}

impl FluctuationPolicy {
    pub fn validate(&self) -> Result<()> {
        ensure(self.epsilon > 0.0 && self.epsilon < 1.0, "epsilon", || {
            format!("must lie in (0, 1), got {}", self.epsilon)
        })?;
        if let BudgetRule::Weighted { gains, errors, n11 } = self.budget_rule {
            let sum = gains + errors + n11;
            ensure(
                gains > 0.0 && errors > 0.0 && n11 > 0.0 && (sum - 1.0).abs() < 1e-9,
                "budget_rule",
                || format!("weights must be positive and sum to 1, got {sum}"),
            )?;
        }
        Ok(())
    }

    pub fn budget(&self) -> EpsilonBudget {
        let eps = self.epsilon;
        let (g, e, n) = match self.budget_rule {
            BudgetRule::EqualSplit => {
                let each = eps / BOUNDED_OBSERVABLES as f64;
                (each, each, each)
            }
            BudgetRule::Weighted { gains, errors, n11 } => {
                (eps * gains / 7.0, eps * errors / 7.0, eps * n11)
            }
        };
        EpsilonBudget {
            per_gain: g,
            per_error_gain: e,
            n11: n,
            total: 7.0 * g + 7.0 * e + n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisPolicy {
    /// Error-correction leakage relative to the Shannon limit.
    #[serde(default = "default_f")]
    pub ec_efficiency: f64,
    /// Largest photon number per party resolved in the linear program.
    #[serde(default = "default_cutoff")]
    pub photon_cutoff: usize,
    /// Relative half-width of point constraints in asymptotic analysis.
    #[serde(default = "default_lp_tolerance")]
    pub lp_tolerance: f64,
}

fn default_f() -> f64 {
    1.16
}
fn default_cutoff() -> usize {
    7
}
fn default_lp_tolerance() -> f64 {
    1e-12
}

impl Default for AnalysisPolicy {
    fn default() -> Self {
        Self {
            ec_efficiency: default_f(),
            photon_cutoff: default_cutoff(),
            lp_tolerance: default_lp_tolerance(),
        }
    }
}

impl AnalysisPolicy {
    pub fn validate(&self) -> Result<()> {
        ensure(self.ec_efficiency >= 1.0, "ec_efficiency", || {
            format!("must be >= 1, got {}", self.ec_efficiency)
        })?;
        ensure(self.photon_cutoff >= 2, "photon_cutoff", || {
            format!("must be >= 2, got {}", self.photon_cutoff)
        })?;
        ensure(
            self.lp_tolerance >= 0.0 && self.lp_tolerance < 1e-3,
            "lp_tolerance",
            || format!("must lie in [0, 1e-3), got {}", self.lp_tolerance),
        )
    }
}

/// Counts of one source pair. Real-valued so that expected counts can stand
/// in for observed ones.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observed {
    pub sent: f64,
    pub coincidences: f64,
    pub errors: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observations {
    pub total_pairs: f64,
    labels: [Observed; 8],
}

impl Observations {
    pub fn new(total_pairs: f64, mut f: impl FnMut(Label) -> Observed) -> Self {
        let mut labels = [Observed::default(); 8];
        for l in Label::ALL {
            labels[l.index()] = f(l);
        }
        Self {
            total_pairs,
            labels,
        }
    }

    /// Expected counts after `n_pairs` pulse pairs.
    pub fn expected(gains: &ExpectedObservables, params: &ProtocolParams, n_pairs: f64) -> Self {
        Self::new(n_pairs, |l| {
            let sent = n_pairs * params.label_prob(l);
            let g = gains.get(l);
            Observed {
                sent,
                coincidences: sent * g.s,
                errors: sent * g.t,
            }
        })
    }

    pub fn get(&self, label: Label) -> Observed {
        self.labels[label.index()]
    }

    /// Same per-pulse statistics with every count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.total_pairs * factor, |l| {
            let o = self.get(l);
            Observed {
                sent: o.sent * factor,
                coincidences: o.coincidences * factor,
                errors: o.errors * factor,
            }
        })
    }
}

impl From<&SourcePairStats> for Observations {
    fn from(s: &SourcePairStats) -> Self {
        Observations::new(s.total_pairs as f64, |l| {
            let c = s.get(l);
            Observed {
                sent: c.sent as f64,
                coincidences: c.coincidences as f64,
                errors: c.errors as f64,
            }
        })
    }
}

/// Brackets on the gain and error-gain of each estimation label, in
/// [`Label::ESTIMATION`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainIntervals {
    pub gains: [Interval; 7],
    pub error_gains: [Interval; 7],
}

impl GainIntervals {
    /// Finite-size brackets from the fluctuation policy.
    pub fn finite(obs: &Observations, fp: &FluctuationPolicy) -> Result<Self> {
        fp.validate()?;
        let budget = fp.budget();
        let mut gains = [Interval::point(0.0); 7];
        let mut error_gains = [Interval::point(0.0); 7];
        for (i, l) in Label::ESTIMATION.into_iter().enumerate() {
            let o = obs.get(l);
            check_observed(l, &o)?;
            gains[i] = bound_mean_with(o.coincidences, o.sent, budget.per_gain, fp.method)?;
            error_gains[i] = bound_mean_with(o.errors, o.sent, budget.per_error_gain, fp.method)?;
        }
        Ok(Self { gains, error_gains })
    }

    /// Point brackets at the observed frequencies, widened by `rel_tol`.
    pub fn asymptotic(obs: &Observations, rel_tol: f64) -> Result<Self> {
        let mut gains = [Interval::point(0.0); 7];
        let mut error_gains = [Interval::point(0.0); 7];
        let widen = |v: f64| Interval {
            low: v * (1.0 - rel_tol),
            high: v * (1.0 + rel_tol),
        };
        for (i, l) in Label::ESTIMATION.into_iter().enumerate() {
            let o = obs.get(l);
            check_observed(l, &o)?;
            gains[i] = widen(o.coincidences / o.sent);
            error_gains[i] = widen(o.errors / o.sent);
        }
        Ok(Self { gains, error_gains })
    }

    /// Every bracket widened outward by `factor` of its own width.
    pub fn widened(&self, factor: f64) -> Self {
        let w = |i: &Interval| Interval {
            low: (i.low - factor * i.width()).max(0.0),
            high: (i.high + factor * i.width()).min(1.0),
        };
        Self {
            gains: self.gains.map(|i| w(&i)),
            error_gains: self.error_gains.map(|i| w(&i)),
        }
    }
}

fn check_observed(l: Label, o: &Observed) -> Result<()> {
    ensure(o.sent > 0.0, "sent", || {
        format!("label {l} has no sent pulses")
    })?;
    ensure(
        o.errors <= o.coincidences && o.coincidences <= o.sent,
        "coincidences",
        || format!("label {l}: need errors <= coincidences <= sent"),
    )
}

fn program(params: &ProtocolParams, ap: &AnalysisPolicy, iv: &GainIntervals) -> YieldProgram {
    let cutoff = ap.photon_cutoff;
    let dim = cutoff + 1;
    let rows = |intervals: &[Interval; 7]| -> Vec<Row> {
        Label::ESTIMATION
            .into_iter()
            .zip(intervals)
            .map(|(l, iv)| {
                let (a, b) = l.sources();
                let (ma, mb) = (params.intensity(a), params.intensity(b));
                let mut weights = vec![0.0; dim * dim];
                for m in 0..dim {
                    for n in 0..dim {
                        weights[m * dim + n] = poisson(ma, m as u32) * poisson(mb, n as u32);
                    }
                }
                let (ta, tb) = (
                    poisson_tail(ma, cutoff as u32),
                    poisson_tail(mb, cutoff as u32),
                );
                Row {
                    weights,
                    tail_cap: ta + tb - ta * tb,
                    low: iv.low,
                    high: iv.high,
                }
            })
            .collect()
    };
    YieldProgram {
        cutoff,
        gain_rows: rows(&iv.gains),
        error_rows: rows(&iv.error_gains),
    }
}

/// Smallest `s11` consistent with the given brackets.
pub fn s11_lower_from(
    params: &ProtocolParams,
    ap: &AnalysisPolicy,
    iv: &GainIntervals,
) -> Result<f64> {
    ap.validate()?;
    program(params, ap, iv).min_s11()
}

/// Largest `t11 / s11L` consistent with the given brackets, clamped at 0.5.
pub fn e11_upper_from(
    params: &ProtocolParams,
    ap: &AnalysisPolicy,
    iv: &GainIntervals,
    s11_lower: f64,
) -> Result<f64> {
    ap.validate()?;
    if s11_lower <= 0.0 {
        return Err(Error::UnresolvableYield);
    }
    let t11 = program(params, ap, iv).max_t11()?;
    Ok((t11 / s11_lower).min(0.5))
}

/// Lower bound on the single-photon-pair yield, valid except with
/// probability at most the policy's ε.
pub fn s11_lower(
    obs: &Observations,
    params: &ProtocolParams,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
) -> Result<f64> {
    params.validate()?;
    s11_lower_from(params, ap, &GainIntervals::finite(obs, fp)?)
}

/// Upper bound on the single-photon-pair X-basis error rate.
pub fn e11_upper(
    obs: &Observations,
    params: &ProtocolParams,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    s11_lower: f64,
) -> Result<f64> {
    params.validate()?;
    e11_upper_from(params, ap, &GainIntervals::finite(obs, fp)?, s11_lower)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Finite,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub mode: Mode,
    pub s11_lower: f64,
    pub e11_upper: f64,
    /// Largest single-photon-pair error-yield, absent when `s11_lower` is 0.
    pub t11_upper: Option<f64>,
    /// Lower bound on single-photon-pair events among `zz` coincidences.
    pub n11_lower: f64,
    /// Key bits. Whole bits in finite mode; in asymptotic mode bits for the
    /// analysed number of pulse pairs without flooring.
    pub key_length: f64,
    /// Bits spent on error correction, `f · C_zz · H(E_zz)`.
    pub ec_leak: f64,
    /// Unclamped `n11·(1 − H(e11)) − ec_leak`, negative when no key survives.
    pub margin: f64,
    pub rate_per_pulse: f64,
    pub rate_bps: f64,
    pub epsilon_used: f64,
    pub budget: Option<EpsilonBudget>,
    /// Set when `e11_upper` reached 0.5 or `s11` could not be bounded away
    /// from zero.
    pub insecure: bool,
    pub zz_coincidences: f64,
    pub zz_error_rate: f64,
}

struct Zz {
    coincidences: f64,
    error_rate: f64,
    /// Expected single-photon-pair events given `s11L`.
    n11_mean: f64,
}

fn zz_terms(obs: &Observations, params: &ProtocolParams, s11_lower: f64) -> Zz {
    let zz = obs.get(Label::Zz);
    let p1 = poisson(params.mu_z, 1);
    Zz {
        coincidences: zz.coincidences,
        error_rate: if zz.coincidences > 0.0 {
            zz.errors / zz.coincidences
        } else {
            0.0
        },
        n11_mean: zz.sent * p1 * p1 * s11_lower,
    }
}

/// Finite-key length from observed counts.
pub fn finite_key(
    obs: &Observations,
    params: &ProtocolParams,
    system: &SystemSpec,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
) -> Result<KeyRateReport> {
    params.validate()?;
    system.validate()?;
    let intervals = GainIntervals::finite(obs, fp)?;
    let budget = fp.budget();
    let s11l = s11_lower_from(params, ap, &intervals)?;
    let t11 = if s11l > 0.0 {
        Some(program(params, ap, &intervals).max_t11()?)
    } else {
        None
    };
    let raw_ratio = t11.map_or(f64::INFINITY, |t| t / s11l);
    let e11u = raw_ratio.min(0.5);
    let zz = zz_terms(obs, params, s11l);
    let n11 = count_lower(zz.n11_mean, budget.n11);
    let leak = ap.ec_efficiency * zz.coincidences * h2(zz.error_rate);
    let margin = n11 * (1.0 - h2(e11u)) - leak;
    let insecure = raw_ratio >= 0.5;
    let key_length = if insecure {
        0.0
    } else {
        margin.max(0.0).floor()
    };
    let rate_per_pulse = key_length / obs.total_pairs;
    Ok(KeyRateReport {
        mode: Mode::Finite,
        s11_lower: s11l,
        e11_upper: e11u,
        t11_upper: t11,
        n11_lower: n11,
        key_length,
        ec_leak: leak,
        margin,
        rate_per_pulse,
        rate_bps: rate_per_pulse * system.clock_rate,
        epsilon_used: budget.total,
        budget: Some(budget),
        insecure,
        zz_coincidences: zz.coincidences,
        zz_error_rate: zz.error_rate,
    })
}

/// Key without finite-size corrections, treating observed frequencies as
/// exact.
pub fn asymptotic_key(
    obs: &Observations,
    params: &ProtocolParams,
    system: &SystemSpec,
    ap: &AnalysisPolicy,
) -> Result<KeyRateReport> {
    params.validate()?;
    system.validate()?;
    ap.validate()?;
    let intervals = GainIntervals::asymptotic(obs, ap.lp_tolerance)?;
    let s11l = s11_lower_from(params, ap, &intervals)?;
    let t11 = if s11l > 0.0 {
        Some(program(params, ap, &intervals).max_t11()?)
    } else {
        None
    };
    let raw_ratio = t11.map_or(f64::INFINITY, |t| t / s11l);
    let e11u = raw_ratio.min(0.5);
    let zz = zz_terms(obs, params, s11l);
    let leak = ap.ec_efficiency * zz.coincidences * h2(zz.error_rate);
    let margin = zz.n11_mean * (1.0 - h2(e11u)) - leak;
    let insecure = raw_ratio >= 0.5;
    let key_length = if insecure { 0.0 } else { margin.max(0.0) };
    let rate_per_pulse = key_length / obs.total_pairs;
    Ok(KeyRateReport {
        mode: Mode::Asymptotic,
        s11_lower: s11l,
        e11_upper: e11u,
        t11_upper: t11,
        n11_lower: zz.n11_mean,
        key_length,
        ec_leak: leak,
        margin,
        rate_per_pulse,
        rate_bps: rate_per_pulse * system.clock_rate,
        epsilon_used: 0.0,
        budget: None,
        insecure,
        zz_coincidences: zz.coincidences,
        zz_error_rate: zz.error_rate,
    })
}

/// Asymptotic key rate per pulse pair from the closed-form model.
pub fn asymptotic_rate(
    system: &SystemSpec,
    params: &ProtocolParams,
    ap: &AnalysisPolicy,
) -> Result<KeyRateReport> {
    params.validate()?;
    let obs = Observations::expected(&expected_observables(system, params), params, 1.0);
    asymptotic_key(&obs, params, system, ap)
}

/// Finite key computed from expected counts after `n_pairs` pulse pairs.
pub fn expected_finite_key(
    system: &SystemSpec,
    params: &ProtocolParams,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
) -> Result<KeyRateReport> {
    params.validate()?;
    let obs = Observations::expected(&expected_observables(system, params), params, n_pairs);
    finite_key(&obs, params, system, fp, ap)
}
