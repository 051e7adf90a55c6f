//! Physical and protocol parameters, and closed-form expected observables.
//!
//! Each party emits phase-randomized weak coherent pulses in two time bins.
//! In the Z basis the whole pulse sits in one bin (early = bit 0); in the X
//! basis half the intensity goes into each bin with a relative phase of 0 or
//! π. The two fields meet on a 50:50 beam splitter at the relay, and a
//! `|Ψ⁻⟩` event is accepted when exactly two of the four (detector, bin)
//! slots click, in different detectors and different bins.
//!
//! For fixed phases the four output slots are independent coherent states, so
//! each slot clicks independently with probability `1 − (1−d)·exp(−η·I)`.
//! The only remaining randomness is the relative phase of the two lasers,
//! which is integrated numerically with a trapezoid rule on
//! [`PHASE_NODES`] points.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Attenuation of standard single-mode fiber at 1550 nm, fixed so that
/// 311 km amounts to 59.05 dB.
pub const STANDARD_FIBER_DB_PER_KM: f64 = 59.05 / 311.0;

/// Attenuation of ultralow-loss fiber at 1550 nm.
pub const ULTRALOW_LOSS_DB_PER_KM: f64 = 0.16;

/// Quadrature nodes over the relative laser phase.
pub const PHASE_NODES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    /// Alice–Bob fiber length in km.
    pub total_length: f64,
    /// dB per km.
    pub attenuation: f64,
    /// Fraction of the total length on Alice's side.
    #[serde(default = "half")]
    pub arm_split_fraction: f64,
    /// Insertion loss in Alice's arm, dB.
    #[serde(default)]
    pub extra_loss_alice: f64,
    /// Insertion loss in Bob's arm, dB.
    #[serde(default)]
    pub extra_loss_bob: f64,
}

fn half() -> f64 {
    0.5
}

impl ChannelSpec {
    pub fn symmetric(total_length: f64, attenuation: f64) -> Self {
        Self {
            total_length,
            attenuation,
            arm_split_fraction: 0.5,
            extra_loss_alice: 0.0,
            extra_loss_bob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.total_length >= 0.0 && self.total_length.is_finite(),
            "total_length",
            || format!("must be a finite value >= 0, got {}", self.total_length),
        )?;
        ensure(
            self.attenuation >= 0.0 && self.attenuation.is_finite(),
            "attenuation",
            || format!("must be a finite value >= 0, got {}", self.attenuation),
        )?;
        ensure(
            (0.0..=1.0).contains(&self.arm_split_fraction),
            "arm_split_fraction",
            || format!("must lie in [0, 1], got {}", self.arm_split_fraction),
        )?;
        ensure(self.extra_loss_alice >= 0.0, "extra_loss_alice", || {
            format!("must be >= 0, got {}", self.extra_loss_alice)
        })?;
        ensure(self.extra_loss_bob >= 0.0, "extra_loss_bob", || {
            format!("must be >= 0, got {}", self.extra_loss_bob)
        })
    }

    /// End-to-end loss in dB, including both insertion losses.
    pub fn total_loss_db(&self) -> f64 {
        self.total_length * self.attenuation + self.extra_loss_alice + self.extra_loss_bob
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency_d1: f64,
    pub efficiency_d2: f64,
    /// Dark-count probability per detector per time bin.
    pub dark_prob: f64,
    /// Fraction of signal counts that survive the coincidence window.
    pub window_efficiency: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            efficiency_d1: 0.65,
            efficiency_d2: 0.65,
            dark_prob: 7.2e-8,
            window_efficiency: 0.85,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("efficiency_d1", self.efficiency_d1),
            ("efficiency_d2", self.efficiency_d2),
            ("dark_prob", self.dark_prob),
            ("window_efficiency", self.window_efficiency),
        ] {
            ensure((0.0..=1.0).contains(&v), name, || {
                format!("must lie in [0, 1], got {v}")
            })?;
        }
        ensure(self.dark_prob < 1e-3, "dark_prob", || {
            format!(
                "{} is implausibly large for a per-bin dark probability",
                self.dark_prob
            )
        })
    }

    /// Effective per-photon detection probability of detector 1 and 2.
    pub fn effective(&self) -> [f64; 2] {
        [
            self.efficiency_d1 * self.window_efficiency,
            self.efficiency_d2 * self.window_efficiency,
        ]
    }

    pub fn mean_efficiency(&self) -> f64 {
        0.5 * (self.efficiency_d1 + self.efficiency_d2)
    }
}

/// Source labels available to each party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// Vacuum decoy (X basis).
    O,
    /// Weak decoy `μx` (X basis).
    X,
    /// Strong decoy `μy` (X basis).
    Y,
    /// Signal `μz` (Z basis).
    Z,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::O, Source::X, Source::Y, Source::Z];

    pub fn basis(self) -> Basis {
        match self {
            Source::Z => Basis::Z,
            _ => Basis::X,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Z,
}

/// The eight tracked (Alice, Bob) source pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Oo,
    Ox,
    Xo,
    Oy,
    Yo,
    Xx,
    Yy,
    Zz,
}

impl Label {
    pub const ALL: [Label; 8] = [
        Label::Oo,
        Label::Ox,
        Label::Xo,
        Label::Oy,
        Label::Yo,
        Label::Xx,
        Label::Yy,
        Label::Zz,
    ];

    /// The seven X-basis pairs used for parameter estimation.
    pub const ESTIMATION: [Label; 7] = [
        Label::Oo,
        Label::Ox,
        Label::Xo,
        Label::Oy,
        Label::Yo,
        Label::Xx,
        Label::Yy,
    ];

    pub fn sources(self) -> (Source, Source) {
        use Source::*;
        match self {
            Label::Oo => (O, O),
            Label::Ox => (O, X),
            Label::Xo => (X, O),
            Label::Oy => (O, Y),
            Label::Yo => (Y, O),
            Label::Xx => (X, X),
            Label::Yy => (Y, Y),
            Label::Zz => (Z, Z),
        }
    }

    pub fn from_sources(alice: Source, bob: Source) -> Option<Label> {
        Label::ALL.into_iter().find(|l| l.sources() == (alice, bob))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Oo => "oo",
            Label::Ox => "ox",
            Label::Xo => "xo",
            Label::Oy => "oy",
            Label::Yo => "yo",
            Label::Xx => "xx",
            Label::Yy => "yy",
            Label::Zz => "zz",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        Label::ALL.into_iter().find(|l| l.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn basis(self) -> Basis {
        self.sources().0.basis()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Intensities and selection probabilities of the four-intensity protocol.
/// The vacuum source takes the remaining probability `1 − p_x − p_y − p_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
}

impl ProtocolParams {
    pub fn new(mu_x: f64, mu_y: f64, mu_z: f64, p_x: f64, p_y: f64, p_z: f64) -> Result<Self> {
        let p = Self {
            mu_x,
            mu_y,
            mu_z,
            p_x,
            p_y,
            p_z,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn p_o(&self) -> f64 {
        (1.0 - self.p_x - self.p_y - self.p_z).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.mu_x >= 0.0 && self.mu_x < self.mu_y, "mu_x", || {
            format!(
                "need 0 <= mu_x < mu_y, got mu_x={} mu_y={}",
                self.mu_x, self.mu_y
            )
        })?;
        ensure(self.mu_y.is_finite(), "mu_y", || {
            format!("must be finite, got {}", self.mu_y)
        })?;
        ensure(self.mu_z > 0.0 && self.mu_z.is_finite(), "mu_z", || {
            format!("must be > 0, got {}", self.mu_z)
        })?;
        for (name, v) in [("p_x", self.p_x), ("p_y", self.p_y), ("p_z", self.p_z)] {
            ensure(v > 0.0, name, || format!("must be > 0, got {v}"))?;
        }
        let sum = self.p_x + self.p_y + self.p_z;
        ensure(sum <= 1.0 + 1e-12, "p_z", || {
            format!("p_x + p_y + p_z must not exceed 1, got {sum}")
        })
    }

    pub fn intensity(&self, s: Source) -> f64 {
        match s {
            Source::O => 0.0,
            Source::X => self.mu_x,
            Source::Y => self.mu_y,
            Source::Z => self.mu_z,
        }
    }

    pub fn prob(&self, s: Source) -> f64 {
        match s {
            Source::O => self.p_o(),
            Source::X => self.p_x,
            Source::Y => self.p_y,
            Source::Z => self.p_z,
        }
    }

    /// Probability that a pulse pair is emitted from `label`.
    pub fn label_prob(&self, label: Label) -> f64 {
        let (a, b) = label.sources();
        self.prob(a) * self.prob(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub channel: ChannelSpec,
    #[serde(default)]
    pub detectors: DetectorSpec,
    /// Probability that an X-basis coincidence has its error verdict flipped.
    #[serde(default = "default_misalignment_x")]
    pub misalignment_x: f64,
    /// Probability that a Z-basis coincidence has its error verdict flipped.
    #[serde(default = "default_misalignment_z")]
    pub misalignment_z: f64,
    /// Pulse pairs per second.
    #[serde(default = "default_clock_rate")]
    pub clock_rate: f64,
}

fn default_misalignment_x() -> f64 {
    0.015
}
fn default_misalignment_z() -> f64 {
    0.005
}
fn default_clock_rate() -> f64 {
    7.5e7
}

impl SystemSpec {
    pub fn new(channel: ChannelSpec) -> Self {
        Self {
            channel,
            detectors: DetectorSpec::default(),
            misalignment_x: default_misalignment_x(),
            misalignment_z: default_misalignment_z(),
            clock_rate: default_clock_rate(),
        }
    }

    /// Symmetric link over standard fiber with default detectors.
    pub fn standard_fiber(total_length: f64) -> Self {
        Self::new(ChannelSpec::symmetric(
            total_length,
            STANDARD_FIBER_DB_PER_KM,
        ))
    }

    /// Symmetric link over ultralow-loss fiber with default detectors.
    pub fn ultralow_loss(total_length: f64) -> Self {
        Self::new(ChannelSpec::symmetric(
            total_length,
            ULTRALOW_LOSS_DB_PER_KM,
        ))
    }

    pub fn with_length(mut self, total_length: f64) -> Self {
        self.channel.total_length = total_length;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.detectors.validate()?;
        for (name, v) in [
            ("misalignment_x", self.misalignment_x),
            ("misalignment_z", self.misalignment_z),
        ] {
            ensure((0.0..=0.5).contains(&v), name, || {
                format!("must lie in [0, 0.5], got {v}")
            })?;
        }
        ensure(
            self.clock_rate > 0.0 && self.clock_rate.is_finite(),
            "clock_rate",
            || format!("must be > 0, got {}", self.clock_rate),
        )
    }

    pub fn misalignment(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.misalignment_x,
            Basis::Z => self.misalignment_z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Alice,
    Bob,
}

/// Gain `s` and error-gain `t` of one source pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gain {
    pub s: f64,
    pub t: f64,
}

impl Gain {
    /// Error rate given a coincidence; zero when there are no coincidences.
    pub fn error_rate(&self) -> f64 {
        if self.s > 0.0 {
            self.t / self.s
        } else {
            0.0
        }
    }
}

/// Expected gain and error-gain for every tracked source pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpectedObservables {
    gains: [Gain; 8],
}

impl ExpectedObservables {
    pub fn from_fn(mut f: impl FnMut(Label) -> Gain) -> Self {
        let mut gains = [Gain::default(); 8];
        for l in Label::ALL {
            gains[l.index()] = f(l);
        }
        Self { gains }
    }

    pub fn get(&self, label: Label) -> Gain {
        self.gains[label.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, Gain)> + '_ {
        Label::ALL.into_iter().map(|l| (l, self.gains[l.index()]))
    }
}

/// `e^{−μ} μ^k / k!`.
pub fn poisson_weight(mu: f64, k: u32) -> Result<f64> {
    ensure(mu >= 0.0 && mu.is_finite(), "mu", || {
        format!("must be finite and >= 0, got {mu}")
    })?;
    Ok(poisson(mu, k))
}

pub(crate) fn poisson(mu: f64, k: u32) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let mut w = (-mu).exp();
    for i in 1..=k {
        w *= mu / i as f64;
    }
    w
}

/// Poisson mass strictly above `cutoff`, summed directly.
pub(crate) fn poisson_tail(mu: f64, cutoff: u32) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut term = poisson(mu, cutoff + 1);
    let mut sum = 0.0;
    let mut k = cutoff + 1;
    while term > 0.0 && term > sum * 1e-18 {
        sum += term;
        k += 1;
        term *= mu / k as f64;
        if k > cutoff + 400 {
            break;
        }
    }
    sum.min(1.0)
}

/// Channel transmittance of one arm, excluding detector and window efficiency.
pub fn arm_transmittance(system: &SystemSpec, side: Side) -> f64 {
    let ch = &system.channel;
    let (frac, extra) = match side {
        Side::Alice => (ch.arm_split_fraction, ch.extra_loss_alice),
        Side::Bob => (1.0 - ch.arm_split_fraction, ch.extra_loss_bob),
    };
    let loss_db = frac * ch.total_length * ch.attenuation + extra;
    10f64.powf(-loss_db / 10.0)
}

/// Binary Shannon entropy in bits, with `H(0) = H(1) = 0`.
pub fn shannon_entropy(x: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&x), "x", || {
        format!("must lie in [0, 1], got {x}")
    })?;
    Ok(h2(x))
}

pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Click probability of a threshold detector with per-photon efficiency
/// `eta` and dark probability `dark`, fed by a coherent state of mean photon
/// number `intensity`.
#[inline]
pub(crate) fn click_prob(eta: f64, dark: f64, intensity: f64) -> f64 {
    let x = eta * intensity;
    // 1 − (1−d)·e^{−x}, written to stay accurate for tiny x.
    dark * (-x).exp() - (-x).exp_m1()
}

/// Probability of a `|Ψ⁻⟩` click pattern from four slot click probabilities
/// ordered `[D1 early, D2 early, D1 late, D2 late]`.
#[inline]
pub(crate) fn psi_minus_prob(c: [f64; 4]) -> f64 {
    let [c1e, c2e, c1l, c2l] = c;
    c1e * c2l * (1.0 - c2e) * (1.0 - c1l) + c2e * c1l * (1.0 - c1e) * (1.0 - c2l)
}

/// Per-bin field magnitudes of one party, `[early, late]`, plus the late-bin
/// phase offset (0 or π) relative to the early bin.
#[derive(Debug, Clone, Copy)]
struct Encoding {
    amp: [f64; 2],
    late_phase: f64,
}

fn encodings(basis: Basis, received_intensity: f64) -> [Encoding; 2] {
    match basis {
        Basis::Z => {
            let a = received_intensity.sqrt();
            [
                Encoding {
                    amp: [a, 0.0],
                    late_phase: 0.0,
                },
                Encoding {
                    amp: [0.0, a],
                    late_phase: 0.0,
                },
            ]
        }
        Basis::X => {
            let a = (0.5 * received_intensity).sqrt();
            [
                Encoding {
                    amp: [a, a],
                    late_phase: 0.0,
                },
                Encoding {
                    amp: [a, a],
                    late_phase: PI,
                },
            ]
        }
    }
}

/// Expected gain and error-gain when Alice sends intensity `mu_a` and Bob
/// `mu_b`, both in `basis`, averaged over the encoded bits and the relative
/// phase of the two lasers.
pub fn pair_gain(system: &SystemSpec, basis: Basis, mu_a: f64, mu_b: f64) -> Gain {
    pair_gain_with_nodes(system, basis, mu_a, mu_b, PHASE_NODES)
}

pub(crate) fn pair_gain_with_nodes(
    system: &SystemSpec,
    basis: Basis,
    mu_a: f64,
    mu_b: f64,
    nodes: usize,
) -> Gain {
    let eta_a = arm_transmittance(system, Side::Alice);
    let eta_b = arm_transmittance(system, Side::Bob);
    let [eff1, eff2] = system.detectors.effective();
    let dark = system.detectors.dark_prob;

    let enc_a = encodings(basis, eta_a * mu_a);
    let enc_b = encodings(basis, eta_b * mu_b);

    let mut s = 0.0;
    let mut t_raw = 0.0;
    for (bit_a, ea) in enc_a.iter().enumerate() {
        for (bit_b, eb) in enc_b.iter().enumerate() {
            // Bins carry interference only if both fields are present.
            let cross = [ea.amp[0] * eb.amp[0], ea.amp[1] * eb.amp[1]];
            let base = [
                0.5 * (ea.amp[0].powi(2) + eb.amp[0].powi(2)),
                0.5 * (ea.amp[1].powi(2) + eb.amp[1].powi(2)),
            ];
            let late_offset = ea.late_phase - eb.late_phase;
            let n = if cross[0] == 0.0 && cross[1] == 0.0 {
                1
            } else {
                nodes
            };
            let mut acc = 0.0;
            for j in 0..n {
                let delta = 2.0 * PI * j as f64 / n as f64;
                let ie = cross[0] * delta.cos();
                let il = cross[1] * (delta + late_offset).cos();
                let c = [
                    click_prob(eff1, dark, base[0] + ie),
                    click_prob(eff2, dark, base[0] - ie),
                    click_prob(eff1, dark, base[1] + il),
                    click_prob(eff2, dark, base[1] - il),
                ];
                acc += psi_minus_prob(c);
            }
            let p = acc / n as f64;
            s += 0.25 * p;
            if bit_a == bit_b {
                t_raw += 0.25 * p;
            }
        }
    }
    let em = system.misalignment(basis);
    let t = (1.0 - em) * t_raw + em * (s - t_raw);
    Gain {
        s,
        t: t.clamp(0.0, s),
    }
}

/// Closed-form expected observables for every tracked source pair.
pub fn expected_observables(system: &SystemSpec, params: &ProtocolParams) -> ExpectedObservables {
    ExpectedObservables::from_fn(|label| {
        let (a, b) = label.sources();
        pair_gain(
            system,
            label.basis(),
            params.intensity(a),
            params.intensity(b),
        )
    })
}

/// Dark-count-only `|Ψ⁻⟩` gain: one dark click in each of two specific
/// slots, silence in the other two, for either of the two patterns.
pub fn dark_only_gain(detectors: &DetectorSpec) -> f64 {
    let d = detectors.dark_prob;
    2.0 * (d * (1.0 - d)).powi(2)
}
