#![allow(dead_code)]

use mdiqkd::lp::{Row, YieldProgram};
use mdiqkd::model::{poisson_weight, Label, ProtocolParams, SystemSpec};
use mdiqkd::simkit::YieldMatrix;

/// Reference operating point for one distance.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub distance_km: f64,
    pub ultralow_loss: bool,
    pub params: ProtocolParams,
    pub n_pairs: f64,
}

impl Preset {
    pub fn system(&self) -> SystemSpec {
        if self.ultralow_loss {
            SystemSpec::ultralow_loss(self.distance_km)
        } else {
            SystemSpec::standard_fiber(self.distance_km)
        }
    }
}

#[allow(clippy::too_many_arguments)]
const fn preset(
    distance_km: f64,
    mu_z: f64,
    mu_y: f64,
    mu_x: f64,
    p_z: f64,
    p_y: f64,
    p_x: f64,
    n_pairs: f64,
) -> Preset {
    Preset {
        distance_km,
        ultralow_loss: distance_km > 400.0,
        params: ProtocolParams {
            mu_x,
            mu_y,
            mu_z,
            p_x,
            p_y,
            p_z,
        },
        n_pairs,
    }
}

pub const PRESETS: [Preset; 6] = [
    preset(102.0, 0.891, 0.189, 0.049, 0.827, 0.025, 0.128, 2.05e12),
    preset(155.0, 0.864, 0.191, 0.058, 0.789, 0.038, 0.154, 2.03e12),
    preset(207.0, 0.757, 0.203, 0.059, 0.731, 0.042, 0.201, 3.61e13),
    preset(259.0, 0.677, 0.267, 0.064, 0.509, 0.068, 0.388, 3.55e13),
    preset(311.0, 0.453, 0.363, 0.083, 0.409, 0.101, 0.439, 9.09e13),
    preset(404.0, 0.413, 0.302, 0.073, 0.315, 0.110, 0.529, 6.04e14),
];

pub fn preset_at(distance_km: f64) -> Preset {
    *PRESETS
        .iter()
        .find(|p| p.distance_km == distance_km)
        .expect("known distance")
}

/// Small deterministic generator for test instances.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.uniform(lo.ln(), hi.ln()).exp()
    }
}

/// Dense LP `max c·x` subject to `eq_a x = eq_b` and `ub_a x ≤ ub_b`,
/// solved by enumerating every basis of active inequalities. Exponential,
/// for small instances only.
pub struct DenseLp {
    pub c: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub ub: Vec<(Vec<f64>, f64)>,
}

impl DenseLp {
    pub fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            eq: Vec::new(),
            ub: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn add_bounds(&mut self, lo: f64, hi: f64) {
        for k in 0..self.n() {
            let mut a = vec![0.0; self.n()];
            a[k] = 1.0;
            self.ub.push((a.clone(), hi));
            a[k] = -1.0;
            self.ub.push((a, -lo));
        }
    }

    /// Largest objective over all feasible vertices, or `None` if there are
    /// none.
    pub fn solve(&self) -> Option<f64> {
        let n = self.n();
        let need = n.checked_sub(self.eq.len())?;
        let normalise = |(a, b): &(Vec<f64>, f64)| {
            let s = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            (a.iter().map(|v| v / s).collect::<Vec<_>>(), b / s)
        };
        let eq: Vec<_> = self.eq.iter().map(normalise).collect();
        let ub: Vec<_> = self.ub.iter().map(normalise).collect();
        let mut best: Option<f64> = None;
        let mut pick: Vec<usize> = (0..need).collect();
        loop {
            let rows: Vec<&(Vec<f64>, f64)> =
                eq.iter().chain(pick.iter().map(|&i| &ub[i])).collect();
            if let Some(x) = solve_square(&rows) {
                let feasible = eq
                    .iter()
                    .all(|(a, b)| (dot(a, &x) - b).abs() <= 1e-9 * (1.0 + b.abs()))
                    && ub
                        .iter()
                        .all(|(a, b)| dot(a, &x) <= b + 1e-9 * (1.0 + b.abs()));
                if feasible {
                    let v = dot(&self.c, &x);
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
            if !next_combination(&mut pick, ub.len()) {
                break;
            }
        }
        best
    }
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

fn next_combination(pick: &mut [usize], n: usize) -> bool {
    let k = pick.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if pick[i] < n - k + i {
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(rows: &[&(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|(a, b)| {
            let mut r = a.clone();
            r.push(*b);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-11 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (x, p) in m[r][col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Weights of the yields `s[m][n]`, `m, n ≤ cutoff`, in the gain of `label`.
pub fn label_weights(params: &ProtocolParams, label: Label, cutoff: usize) -> Vec<f64> {
    let (a, b) = label.sources();
    let (ma, mb) = (params.intensity(a), params.intensity(b));
    let dim = cutoff + 1;
    let mut w = vec![0.0; dim * dim];
    for m in 0..dim {
        for n in 0..dim {
            w[m * dim + n] =
                poisson_weight(ma, m as u32).unwrap() * poisson_weight(mb, n as u32).unwrap();
        }
    }
    w
}

/// Two-photon-truncated instance: the true yields vanish beyond two photons
/// per party, so the cutoff-2 program needs no tail slack.
pub struct TruncatedInstance {
    pub params: ProtocolParams,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// Relative half-width per estimation label; zero for an equality.
    pub widths: [f64; 7],
}

impl TruncatedInstance {
    pub fn random(rng: &mut SplitMix, intervals: usize) -> Self {
        let mu_y = rng.uniform(0.2, 0.8);
        let params = ProtocolParams::new(
            mu_y * rng.uniform(0.1, 0.6),
            mu_y,
            rng.uniform(0.3, 0.9),
            0.3,
            0.2,
            0.4,
        )
        .unwrap();
        let s: Vec<f64> = (0..9).map(|_| rng.uniform(0.0, 1.0)).collect();
        let t: Vec<f64> = s.iter().map(|v| v * rng.uniform(0.0, 0.5)).collect();
        let mut widths = [0.0; 7];
        let mut chosen = 0;
        while chosen < intervals {
            let k = (rng.next_u64() % 7) as usize;
            if widths[k] == 0.0 {
                widths[k] = rng.uniform(0.005, 0.08);
                chosen += 1;
            }
        }
        Self {
            params,
            s,
            t,
            widths,
        }
    }

    fn bounds(&self, w: &[f64], truth: &[f64], width: f64) -> (f64, f64) {
        let g = dot(w, truth);
        (g * (1.0 - width), g * (1.0 + width))
    }

    pub fn program(&self, error_widths: [f64; 7]) -> YieldProgram {
        let rows = |truth: &[f64], widths: &[f64; 7]| -> Vec<Row> {
            Label::ESTIMATION
                .iter()
                .zip(widths)
                .map(|(&l, &width)| {
                    let weights = label_weights(&self.params, l, 2);
                    let (low, high) = self.bounds(&weights, truth, width);
                    Row {
                        weights,
                        tail_cap: 0.0,
                        low,
                        high,
                    }
                })
                .collect()
        };
        YieldProgram {
            cutoff: 2,
            gain_rows: rows(&self.s, &self.widths),
            error_rows: rows(&self.t, &error_widths),
        }
    }

    /// Vertex-enumeration optimum of `min s[1][1]`.
    pub fn brute_min_s11(&self) -> f64 {
        let mut lp = DenseLp::new(9);
        lp.c[4] = -1.0;
        lp.add_bounds(0.0, 1.0);
        for (&l, &width) in Label::ESTIMATION.iter().zip(&self.widths) {
            let w = label_weights(&self.params, l, 2);
            let (lo, hi) = self.bounds(&w, &self.s, width);
            if width == 0.0 {
                lp.eq.push((w, lo));
            } else {
                lp.ub.push((w.clone(), hi));
                lp.ub.push((w.iter().map(|v| -v).collect(), -lo));
            }
        }
        -lp.solve().expect("truth is feasible")
    }

    /// Vertex-enumeration optimum of `max t[1][1]` with every gain and
    /// error-gain pinned.
    pub fn brute_max_t11(&self) -> f64 {
        let mut lp = DenseLp::new(18);
        lp.c[9 + 4] = 1.0;
        lp.add_bounds(0.0, 1.0);
        for l in Label::ESTIMATION {
            let w = label_weights(&self.params, l, 2);
            let mut a = vec![0.0; 18];
            a[..9].copy_from_slice(&w);
            lp.eq.push((a, dot(&w, &self.s)));
            let mut a = vec![0.0; 18];
            a[9..].copy_from_slice(&w);
            lp.eq.push((a, dot(&w, &self.t)));
        }
        for k in 0..9 {
            let mut a = vec![0.0; 18];
            a[9 + k] = 1.0;
            a[k] = -1.0;
            lp.ub.push((a, 0.0));
        }
        lp.solve().expect("truth is feasible")
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Random yields with detector-like structure: a dark floor, a coincidence
/// term growing with both photon numbers, and a one-sided multi-photon term.
pub fn random_yields(rng: &mut SplitMix) -> YieldMatrix {
    let eta = rng.log_uniform(1e-3, 0.2);
    let dark = rng.log_uniform(1e-8, 1e-5);
    let both = rng.uniform(0.3, 0.5);
    let one = rng.uniform(0.1, 0.5);
    let e11 = rng.uniform(0.005, 0.1);
    let click = |m: usize| 1.0 - (1.0 - eta).powi(m as i32);
    let multi = |m: usize| {
        if m < 2 {
            0.0
        } else {
            1.0 - (1.0 - eta).powi(m as i32) - m as f64 * eta * (1.0 - eta).powi(m as i32 - 1)
        }
    };
    YieldMatrix::from_fn(
        7,
        |m, n| (2.0 * dark + both * click(m) * click(n) + one * (multi(m) + multi(n))).min(1.0),
        |m, n| match (m, n) {
            (1, 1) => e11,
            (0, _) | (_, 0) => 0.5,
            _ => 0.25 + 0.1 * (m + n) as f64 / 14.0,
        },
    )
    .unwrap()
}

pub fn random_params(rng: &mut SplitMix) -> ProtocolParams {
    let mu_y = rng.uniform(0.15, 0.5);
    let p_z = rng.uniform(0.3, 0.7);
    let p_x = (1.0 - p_z) * rng.uniform(0.3, 0.6);
    let p_y = (1.0 - p_z - p_x) * rng.uniform(0.3, 0.7);
    ProtocolParams::new(
        mu_y * rng.uniform(0.1, 0.5),
        mu_y,
        rng.uniform(0.3, 0.9),
        p_x,
        p_y,
        p_z,
    )
    .unwrap()
}

pub struct CoverageTrial {
    pub s11_true: f64,
    pub e11_true: f64,
    pub s11_lower: f64,
    pub e11_upper: f64,
}

impl CoverageTrial {
    pub fn covered(&self) -> bool {
        self.s11_lower <= self.s11_true && self.e11_upper >= self.e11_true
    }

    pub fn informative(&self) -> bool {
        self.s11_lower > 0.0 && self.e11_upper < 0.5
    }
}

/// Samples counts from random yields and bounds them at the default policy.
pub fn coverage_trial(rng: &mut SplitMix, seed: u64) -> CoverageTrial {
    use mdiqkd::decoy::{finite_key, AnalysisPolicy, FluctuationPolicy, Observations};
    use mdiqkd::simkit::synth_stats;
    let yields = random_yields(rng);
    let params = random_params(rng);
    let n = rng.log_uniform(1e10, 1e14) as u64;
    let stats = synth_stats(&yields, &params, n, seed).unwrap();
    let report = finite_key(
        &Observations::from(&stats),
        &params,
        &SystemSpec::standard_fiber(0.0),
        &FluctuationPolicy::default(),
        &AnalysisPolicy::default(),
    )
    .unwrap();
    CoverageTrial {
        s11_true: yields.s11(),
        e11_true: yields.e11(),
        s11_lower: report.s11_lower,
        e11_upper: report.e11_upper,
    }
}
