//! Search over protocol parameters for the largest key rate.
//!
//! Multi-start Nelder–Mead on an unconstrained 6-vector. Intensities live on
//! a logistic log scale inside `(1e-4, 2]`, `mu_x` is a logistic fraction of
//! `mu_y`, and the four selection probabilities are a softmax with the
//! vacuum logit pinned at zero, so every point maps to valid parameters.
//!
//! The objective is computed from expected counts. Where key survives it is
//! the key length per pulse pair. Below that it falls through scale-free
//! tiers so that the search still moves toward key without being rewarded
//! for a vanishing signal:
//! `privacy / leak − 1` in `[−1, 0)` while `e11` is below one half,
//! `−2 + 0.5 / e11` in `(−2, −1]` once it saturates, and `−2` when `s11`
//! cannot be bounded away from zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoy::{
    asymptotic_rate, expected_finite_key, AnalysisPolicy, FluctuationPolicy, KeyRateReport, Mode,
};
use crate::error::{ensure, Result};
use crate::model::{ProtocolParams, SystemSpec};

const MU_MIN: f64 = 1e-4;
const MU_MAX: f64 = 2.0;
const DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub starts: usize,
    /// Total objective evaluations, shared equally among starts.
    pub budget: usize,
    /// Relative spread of simplex values at which a start stops.
    pub tolerance: f64,
    pub objective: Mode,
    /// Extra starting points tried before the random ones.
    pub warm_starts: Vec<ProtocolParams>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            starts: 32,
            budget: 32 * 400,
            tolerance: 1e-4,
            objective: Mode::Finite,
            warm_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_params: ProtocolParams,
    /// Key rate per pulse pair at `best_params`, clamped at zero.
    pub best_rate_per_pulse: f64,
    /// Objective value at `best_params`; negative when no key survives.
    pub best_objective: f64,
    pub evaluations: usize,
    pub starts: usize,
    /// Every start met the tolerance within its share of the budget.
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

fn mu_from(z: f64) -> f64 {
    let (a, b) = (MU_MIN.ln(), MU_MAX.ln());
    (a + (b - a) * sigmoid(z)).exp()
}

fn mu_to(mu: f64) -> f64 {
    let (a, b) = (MU_MIN.ln(), MU_MAX.ln());
    logit((mu.clamp(MU_MIN, MU_MAX).ln() - a) / (b - a))
}

/// Maps an unconstrained point to valid parameters.
pub fn decode(z: &[f64; DIM]) -> ProtocolParams {
    let mu_z = mu_from(z[0]);
    let mu_y = mu_from(z[1]);
    let mu_x = mu_y * sigmoid(z[2]);
    let m = z[3].max(z[4]).max(z[5]).max(0.0);
    let w = [
        (-m).exp(),
        (z[3] - m).exp(),
        (z[4] - m).exp(),
        (z[5] - m).exp(),
    ];
    let total: f64 = w.iter().sum();
    ProtocolParams {
        mu_x,
        mu_y,
        mu_z,
        p_x: w[1] / total,
        p_y: w[2] / total,
        p_z: w[3] / total,
    }
}

/// Inverse of [`decode`] for parameters with `p_o > 0` and `mu_x > 0`.
pub fn encode(p: &ProtocolParams) -> [f64; DIM] {
    let p_o = p.p_o().max(1e-12);
    [
        mu_to(p.mu_z),
        mu_to(p.mu_y),
        logit(p.mu_x / p.mu_y),
        (p.p_x / p_o).ln(),
        (p.p_y / p_o).ln(),
        (p.p_z / p_o).ln(),
    ]
}

fn report(
    system: &SystemSpec,
    params: &ProtocolParams,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    mode: Mode,
) -> Result<KeyRateReport> {
    match mode {
        Mode::Finite => expected_finite_key(system, params, n_pairs, fp, ap),
        Mode::Asymptotic => asymptotic_rate(system, params, ap),
    }
}

struct Objective<'a> {
    system: &'a SystemSpec,
    n_pairs: f64,
    fp: &'a FluctuationPolicy,
    ap: &'a AnalysisPolicy,
    mode: Mode,
}

impl Objective<'_> {
    fn eval(&self, z: &[f64; DIM]) -> f64 {
        let params = decode(z);
        report(
            self.system,
            &params,
            self.n_pairs,
            self.fp,
            self.ap,
            self.mode,
        )
        .map(|r| score(&r, self.n_pairs))
        .unwrap_or(f64::NEG_INFINITY)
    }
}

fn score(r: &KeyRateReport, n_pairs: f64) -> f64 {
    if r.margin > 0.0 && !r.insecure {
        let pairs = match r.mode {
            Mode::Finite => n_pairs,
            Mode::Asymptotic => 1.0,
        };
        return r.margin / pairs;
    }
    let Some(t11) = r.t11_upper else {
        return -2.0;
    };
    let e11 = t11 / r.s11_lower;
    if e11 >= 0.5 {
        return -2.0 + 0.5 / e11;
    }
    let privacy = r.margin + r.ec_leak;
    if r.ec_leak > 0.0 {
        (privacy / r.ec_leak - 1.0).clamp(-1.0, 0.0)
    } else {
        -1.0
    }
}

struct StartOutcome {
    z: [f64; DIM],
    value: f64,
    evaluations: usize,
    converged: bool,
}

/// Maximises `f` from `start` with at most `budget` evaluations.
fn nelder_mead(
    f: impl Fn(&[f64; DIM]) -> f64,
    start: [f64; DIM],
    budget: usize,
    tol: f64,
) -> StartOutcome {
    const STEP: f64 = 0.6;
    let mut simplex: Vec<([f64; DIM], f64)> = Vec::with_capacity(DIM + 1);
    simplex.push((start, f(&start)));
    for i in 0..DIM {
        let mut z = start;
        z[i] += STEP;
        simplex.push((z, f(&z)));
    }
    let mut evaluations = DIM + 1;
    let order = |s: &mut Vec<([f64; DIM], f64)>| {
        s.sort_by(|a, b| b.1.total_cmp(&a.1));
    };
    let lerp = |a: &[f64; DIM], b: &[f64; DIM], t: f64| -> [f64; DIM] {
        std::array::from_fn(|k| a[k] + t * (b[k] - a[k]))
    };
    order(&mut simplex);
    let mut converged = false;
    while evaluations < budget {
        let (best, worst) = (simplex[0].1, simplex[DIM].1);
        if best.is_finite() && worst.is_finite() {
            let scale = best.abs().max(worst.abs()).max(1e-300);
            if (best - worst).abs() <= tol * scale {
                converged = true;
                break;
            }
        }
        let centroid: [f64; DIM] = std::array::from_fn(|k| {
            simplex[..DIM].iter().map(|(z, _)| z[k]).sum::<f64>() / DIM as f64
        });
        let worst_z = simplex[DIM].0;
        let reflected = lerp(&centroid, &worst_z, -1.0);
        let fr = f(&reflected);
        evaluations += 1;
        if fr > simplex[0].1 {
            let expanded = lerp(&centroid, &worst_z, -2.0);
            let fe = f(&expanded);
            evaluations += 1;
            simplex[DIM] = if fe > fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr > simplex[DIM - 1].1 {
            simplex[DIM] = (reflected, fr);
        } else {
            let (toward, fbase) = if fr > simplex[DIM].1 {
                (reflected, fr)
            } else {
                (worst_z, simplex[DIM].1)
            };
            let contracted = lerp(&centroid, &toward, 0.5);
            let fc = f(&contracted);
            evaluations += 1;
            if fc > fbase {
                simplex[DIM] = (contracted, fc);
            } else {
                let best_z = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let z = lerp(&best_z, &entry.0, 0.5);
                    *entry = (z, f(&z));
                }
                evaluations += DIM;
            }
        }
        order(&mut simplex);
    }
    StartOutcome {
        z: simplex[0].0,
        value: simplex[0].1,
        evaluations,
        converged,
    }
}

fn random_start(rng: &mut ChaCha8Rng) -> [f64; DIM] {
    let mu_z = rng.random_range(0.05..1.0);
    let mu_y = rng.random_range(0.05..0.6);
    let mu_x = mu_y * rng.random_range(0.05..0.7);
    let p_z = rng.random_range(0.1..0.9);
    let rest = 1.0 - p_z;
    let p_x = rest * rng.random_range(0.2..0.8);
    let p_y = (rest - p_x) * rng.random_range(0.1..0.8);
    encode(&ProtocolParams {
        mu_x,
        mu_y,
        mu_z,
        p_x,
        p_y,
        p_z,
    })
}

/// Best parameters for `system` after `n_pairs` pulse pairs with default
/// options and a total budget of `budget` evaluations.
pub fn optimize(
    system: &SystemSpec,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    seed: u64,
    budget: usize,
) -> Result<OptimizationResult> {
    let opts = OptimizeOptions {
        budget,
        ..Default::default()
    };
    optimize_with(system, n_pairs, fp, ap, seed, &opts)
}

pub fn optimize_with(
    system: &SystemSpec,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    seed: u64,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult> {
    system.validate()?;
    fp.validate()?;
    ap.validate()?;
    ensure(opts.budget >= 100, "budget", || {
        format!("must be >= 100, got {}", opts.budget)
    })?;
    ensure(opts.starts >= 1, "starts", || "must be >= 1".into())?;
    ensure(n_pairs >= 1.0, "n_pairs", || {
        format!("must be >= 1, got {n_pairs}")
    })?;
    ensure(opts.tolerance > 0.0, "tolerance", || {
        "must be positive".into()
    })?;
    for p in &opts.warm_starts {
        p.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<[f64; DIM]> = opts.warm_starts.iter().map(encode).collect();
    starts.extend((0..opts.starts).map(|_| random_start(&mut rng)));
    let per_start = (opts.budget / starts.len()).max(DIM + 2);

    let objective = Objective {
        system,
        n_pairs,
        fp,
        ap,
        mode: opts.objective,
    };
    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .map(|z| nelder_mead(|z| objective.eval(z), *z, per_start, opts.tolerance))
        .collect();

    // Ties go to the lowest start index.
    let best = outcomes
        .iter()
        .enumerate()
        .fold(None::<(usize, &StartOutcome)>, |acc, (i, o)| match acc {
            Some((_, b)) if b.value >= o.value => acc,
            _ => Some((i, o)),
        })
        .map(|(_, o)| o)
        .expect("at least one start");
    let best_params = decode(&best.z);
    best_params.validate()?;
    let r = report(system, &best_params, n_pairs, fp, ap, opts.objective)?;
    Ok(OptimizationResult {
        best_params,
        best_rate_per_pulse: r.rate_per_pulse,
        best_objective: best.value,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        starts: starts.len(),
        converged: outcomes.iter().all(|o| o.converged),
    })
}

/// Objective used by the optimizer, exposed for comparisons.
pub fn objective_value(
    system: &SystemSpec,
    params: &ProtocolParams,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    mode: Mode,
) -> Result<f64> {
    Ok(score(
        &report(system, params, n_pairs, fp, ap, mode)?,
        n_pairs,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub mu_z: f64,
    pub p_z: f64,
    pub finite_bps: f64,
    pub asymptotic_bps: f64,
}

/// Finite and asymptotic rates over a `(mu_z, p_z)` grid. Changing `p_z`
/// rescales the other three selection probabilities in proportion.
pub fn rate_surface(
    system: &SystemSpec,
    n_pairs: f64,
    fp: &FluctuationPolicy,
    ap: &AnalysisPolicy,
    base: &ProtocolParams,
    mu_z_grid: &[f64],
    p_z_grid: &[f64],
) -> Result<Vec<SurfacePoint>> {
    ensure(
        !mu_z_grid.is_empty() && !p_z_grid.is_empty(),
        "grid",
        || "must be non-empty".into(),
    )?;
    base.validate()?;
    let cells: Vec<(f64, f64)> = mu_z_grid
        .iter()
        .flat_map(|&m| p_z_grid.iter().map(move |&p| (m, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(mu_z, p_z)| {
            ensure(p_z > 0.0 && p_z < 1.0, "p_z", || {
                format!("must lie in (0, 1), got {p_z}")
            })?;
            let k = (1.0 - p_z) / (1.0 - base.p_z);
            let params =
                ProtocolParams::new(base.mu_x, base.mu_y, mu_z, base.p_x * k, base.p_y * k, p_z)?;
            let fin = expected_finite_key(system, &params, n_pairs, fp, ap)?;
            let asy = asymptotic_rate(system, &params, ap)?;
            Ok(SurfacePoint {
                mu_z,
                p_z,
                finite_bps: fin.rate_bps,
                asymptotic_bps: asy.rate_bps,
            })
        })
        .collect()
}
