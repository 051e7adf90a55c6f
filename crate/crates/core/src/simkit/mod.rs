//! Pulse-level Monte Carlo of the relay measurement and synthetic data
//! generators used to validate the decoy analysis.

mod hom;

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::AddAssign;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{
    arm_transmittance, poisson, Basis, ExpectedObservables, Gain, Label, ProtocolParams, Side,
    Source, SystemSpec,
};

pub use hom::{pair_yield, true_s11, PairEncoding};

/// Pulse pairs per independently seeded batch.
pub const BATCH_SIZE: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub sent: u64,
    pub coincidences: u64,
    pub errors: u64,
}

impl AddAssign for PairCounts {
    fn add_assign(&mut self, o: Self) {
        self.sent += o.sent;
        self.coincidences += o.coincidences;
        self.errors += o.errors;
    }
}

/// Raw counting statistics of a run.
///
/// Pulse pairs whose sources do not form one of the eight tracked labels
/// (basis mismatch, or `xy`/`yx`) are only counted in `discarded`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePairStats {
    pub total_pairs: u64,
    pub seed: u64,
    pub counts: [PairCounts; 8],
    pub discarded: u64,
}

impl SourcePairStats {
    pub fn empty(total_pairs: u64, seed: u64) -> Self {
        Self {
            total_pairs,
            seed,
            counts: [PairCounts::default(); 8],
            discarded: 0,
        }
    }

    pub fn get(&self, label: Label) -> PairCounts {
        self.counts[label.index()]
    }

    pub fn get_mut(&mut self, label: Label) -> &mut PairCounts {
        &mut self.counts[label.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let mut total = self.discarded;
        for l in Label::ALL {
            let c = self.get(l);
            ensure(c.errors <= c.coincidences, "errors", || {
                format!(
                    "{l}: errors {} exceed coincidences {}",
                    c.errors, c.coincidences
                )
            })?;
            ensure(c.coincidences <= c.sent, "coincidences", || {
                format!(
                    "{l}: coincidences {} exceed sent {}",
                    c.coincidences, c.sent
                )
            })?;
            total = total.saturating_add(c.sent);
        }
        ensure(total == self.total_pairs, "total_pairs", || {
            format!("sent counts sum to {total}, expected {}", self.total_pairs)
        })
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.discarded += other.discarded;
        self
    }
}

/// Photon-number-resolved yields and error rates.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldMatrix {
    cutoff: usize,
    s: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
}

impl YieldMatrix {
    pub fn new(s: Vec<Vec<f64>>, e: Vec<Vec<f64>>) -> Result<Self> {
        let dim = s.len();
        ensure(dim >= 2, "s", || "need at least a 2x2 matrix".into())?;
        ensure(e.len() == dim, "e", || "shape must match s".into())?;
        for (rs, re) in s.iter().zip(&e) {
            ensure(rs.len() == dim && re.len() == dim, "s", || {
                "matrix must be square".into()
            })?;
            for v in rs.iter().chain(re) {
                ensure((0.0..=1.0).contains(v), "s", || {
                    format!("entry {v} outside [0, 1]")
                })?;
            }
        }
        Ok(Self {
            cutoff: dim - 1,
            s,
            e,
        })
    }

    /// Builds a matrix from per-cell closures over `0..=cutoff`.
    pub fn from_fn(
        cutoff: usize,
        mut s: impl FnMut(usize, usize) -> f64,
        mut e: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let dim = cutoff + 1;
        let sv = (0..dim)
            .map(|m| (0..dim).map(|n| s(m, n)).collect())
            .collect();
        let ev = (0..dim)
            .map(|m| (0..dim).map(|n| e(m, n)).collect())
            .collect();
        Self::new(sv, ev)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn s(&self, m: usize, n: usize) -> f64 {
        self.s[m][n]
    }

    pub fn e(&self, m: usize, n: usize) -> f64 {
        self.e[m][n]
    }

    pub fn s11(&self) -> f64 {
        self.s[1][1]
    }

    pub fn e11(&self) -> f64 {
        self.e[1][1]
    }

    /// Gains implied by the yields, truncated at the cutoff.
    pub fn gains(&self, params: &ProtocolParams) -> ExpectedObservables {
        ExpectedObservables::from_fn(|label| {
            let (a, b) = label.sources();
            let (ma, mb) = (params.intensity(a), params.intensity(b));
            let mut g = Gain::default();
            for m in 0..=self.cutoff {
                let wa = poisson(ma, m as u32);
                if wa == 0.0 {
                    continue;
                }
                for n in 0..=self.cutoff {
                    let w = wa * poisson(mb, n as u32);
                    g.s += w * self.s[m][n];
                    g.t += w * self.s[m][n] * self.e[m][n];
                }
            }
            g
        })
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of batch `index` under `master`.
pub fn batch_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Per-source constants for the sampler.
#[derive(Clone, Copy)]
struct Emitter {
    cumulative: [f64; 4],
    /// Received field magnitude (Z: one bin, X: each bin).
    amplitude: [f64; 4],
}

impl Emitter {
    fn new(params: &ProtocolParams, eta: f64) -> Self {
        let mut cumulative = [0.0; 4];
        let mut acc = 0.0;
        let mut amplitude = [0.0; 4];
        for (i, s) in Source::ALL.into_iter().enumerate() {
            acc += params.prob(s);
            cumulative[i] = acc;
            let received = eta * params.intensity(s);
            amplitude[i] = match s.basis() {
                Basis::Z => received.sqrt(),
                Basis::X => (0.5 * received).sqrt(),
            };
        }
        cumulative[3] = 1.0;
        Self {
            cumulative,
            amplitude,
        }
    }

    fn pick(&self, u: f64) -> usize {
        self.cumulative.iter().position(|&c| u < c).unwrap_or(3)
    }

    /// Field in `[early, late]` for source index `src`, encoded bit and global
    /// phase.
    fn field(&self, src: usize, bit: bool, theta: f64) -> [Complex64; 2] {
        let a = self.amplitude[src];
        let g = Complex64::from_polar(a, theta);
        if src == 3 {
            if bit {
                [Complex64::new(0.0, 0.0), g]
            } else {
                [g, Complex64::new(0.0, 0.0)]
            }
        } else if bit {
            [g, -g]
        } else {
            [g, g]
        }
    }
}

const SOURCES: [Source; 4] = Source::ALL;

/// Runs `n_pairs` pulse pairs through the channel and relay.
///
/// The result depends only on the inputs and `seed`: pairs are generated in
/// fixed batches of [`BATCH_SIZE`], each with its own seeded stream, and
/// batch counts are summed.
pub fn simulate(
    system: &SystemSpec,
    params: &ProtocolParams,
    n_pairs: u64,
    seed: u64,
) -> Result<SourcePairStats> {
    ensure(n_pairs >= 1, "n_pairs", || "must be at least 1".into())?;
    system.validate()?;
    params.validate()?;

    let alice = Emitter::new(params, arm_transmittance(system, Side::Alice));
    let bob = Emitter::new(params, arm_transmittance(system, Side::Bob));
    let batches = n_pairs.div_ceil(BATCH_SIZE);

    let merged = (0..batches)
        .into_par_iter()
        .map(|b| {
            let len = BATCH_SIZE.min(n_pairs - b * BATCH_SIZE);
            let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(seed, b));
            run_batch(system, &alice, &bob, len, &mut rng)
        })
        .reduce(|| SourcePairStats::empty(0, 0), SourcePairStats::merge);

    Ok(SourcePairStats {
        total_pairs: n_pairs,
        seed,
        ..merged
    })
}

/// Relay and detector constants shared by every pulse pair.
struct Relay {
    eff: [f64; 2],
    keep: f64,
    misalignment: [f64; 2],
}

impl Relay {
    fn new(system: &SystemSpec) -> Self {
        Self {
            eff: system.detectors.effective(),
            keep: 1.0 - system.detectors.dark_prob,
            misalignment: [system.misalignment(Basis::X), system.misalignment(Basis::Z)],
        }
    }

    /// Sends one pulse pair from sources `sa`, `sb` and records the outcome.
    fn run_pair(
        &self,
        alice: &Emitter,
        bob: &Emitter,
        (sa, sb): (usize, usize),
        basis: Basis,
        rng: &mut ChaCha8Rng,
        counts: &mut PairCounts,
    ) {
        counts.sent += 1;
        let bits: u32 = rng.random();
        let (bit_a, bit_b) = (bits & 1 == 1, bits & 2 == 2);
        let theta_a = 2.0 * PI * rng.random::<f64>();
        let theta_b = 2.0 * PI * rng.random::<f64>();
        let fa = alice.field(sa, bit_a, theta_a);
        let fb = bob.field(sb, bit_b, theta_b);

        // 50:50 beam splitter, per bin: D1 ← (a+b)/√2, D2 ← (a−b)/√2.
        let mut clicks = [false; 4];
        for bin in 0..2 {
            let d1 = (fa[bin] + fb[bin]) * FRAC_1_SQRT_2;
            let d2 = (fa[bin] - fb[bin]) * FRAC_1_SQRT_2;
            for (k, field) in [d1, d2].into_iter().enumerate() {
                let no_click = self.keep * (-self.eff[k] * field.norm_sqr()).exp();
                clicks[2 * bin + k] = rng.random::<f64>() >= no_click;
            }
        }
        // [D1e, D2e, D1l, D2l]: one click in each bin, in different detectors.
        let psi_minus = matches!(
            clicks,
            [true, false, false, true] | [false, true, true, false]
        );
        if !psi_minus {
            return;
        }
        counts.coincidences += 1;
        // Anti-correlated bits (Z) or opposite phases (X) are correct.
        let mut error = bit_a == bit_b;
        let flip = match basis {
            Basis::X => self.misalignment[0],
            Basis::Z => self.misalignment[1],
        };
        if rng.random::<f64>() < flip {
            error = !error;
        }
        if error {
            counts.errors += 1;
        }
    }
}

fn run_batch(
    system: &SystemSpec,
    alice: &Emitter,
    bob: &Emitter,
    len: u64,
    rng: &mut ChaCha8Rng,
) -> SourcePairStats {
    let relay = Relay::new(system);
    let mut table = [[None; 4]; 4];
    for (i, a) in SOURCES.into_iter().enumerate() {
        for (j, b) in SOURCES.into_iter().enumerate() {
            table[i][j] = Label::from_sources(a, b);
        }
    }

    let mut out = SourcePairStats::empty(0, 0);
    for _ in 0..len {
        let sa = alice.pick(rng.random::<f64>());
        let sb = bob.pick(rng.random::<f64>());
        let Some(label) = table[sa][sb] else {
            out.discarded += 1;
            continue;
        };
        relay.run_pair(
            alice,
            bob,
            (sa, sb),
            label.basis(),
            rng,
            &mut out.counts[label.index()],
        );
    }
    out
}

/// Runs `n_pairs` pulse pairs all emitted from `label`, with the same
/// batching and seeding as [`simulate`].
pub fn simulate_pair(
    system: &SystemSpec,
    params: &ProtocolParams,
    label: Label,
    n_pairs: u64,
    seed: u64,
) -> Result<PairCounts> {
    ensure(n_pairs >= 1, "n_pairs", || "must be at least 1".into())?;
    system.validate()?;
    params.validate()?;

    let alice = Emitter::new(params, arm_transmittance(system, Side::Alice));
    let bob = Emitter::new(params, arm_transmittance(system, Side::Bob));
    let relay = Relay::new(system);
    let (a, b) = label.sources();
    let idx = |s: Source| SOURCES.iter().position(|&t| t == s).expect("known source");
    let pair = (idx(a), idx(b));
    let batches = n_pairs.div_ceil(BATCH_SIZE);

    Ok((0..batches)
        .into_par_iter()
        .map(|i| {
            let len = BATCH_SIZE.min(n_pairs - i * BATCH_SIZE);
            let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(seed, i));
            let mut counts = PairCounts::default();
            for _ in 0..len {
                relay.run_pair(&alice, &bob, pair, label.basis(), &mut rng, &mut counts);
            }
            counts
        })
        .reduce(PairCounts::default, |mut x, y| {
            x += y;
            x
        }))
}

/// Samples counts whose expectations come from a yield matrix.
///
/// Sent counts are multinomial over the eight labels plus the discarded
/// remainder; coincidences and errors are binomial at the implied gains.
pub fn synth_stats(
    yields: &YieldMatrix,
    params: &ProtocolParams,
    n_pairs: u64,
    seed: u64,
) -> Result<SourcePairStats> {
    ensure(n_pairs >= 1, "n_pairs", || "must be at least 1".into())?;
    params.validate()?;
    let gains = yields.gains(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SourcePairStats::empty(n_pairs, seed);

    let mut remaining = n_pairs;
    let mut mass_left = 1.0;
    for l in Label::ALL {
        let p = params.label_prob(l);
        let sent = binomial(&mut rng, remaining, (p / mass_left).min(1.0));
        remaining -= sent;
        mass_left -= p;
        let g = gains.get(l);
        let coincidences = binomial(&mut rng, sent, g.s.min(1.0));
        let errors = binomial(&mut rng, coincidences, g.error_rate().min(1.0));
        *stats.get_mut(l) = PairCounts {
            sent,
            coincidences,
            errors,
        };
    }
    stats.discarded = remaining;
    Ok(stats)
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}
