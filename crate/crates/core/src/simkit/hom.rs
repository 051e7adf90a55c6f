//! Single-photon-pair statistics from explicit two-photon interference.
//!
//! One photon per party enters the beam splitter in a superposition of the
//! two time bins. The output two-photon state is expanded over the four
//! (bin, detector) slots with bosonic symmetrization, then each slot is read
//! out by a threshold detector with finite efficiency and dark counts.

use num_complex::Complex64;

use crate::model::{arm_transmittance, psi_minus_prob, Side, SystemSpec};

/// Encoding of a single photon by one party.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairEncoding {
    /// Time-bin bit: `false` = early.
    Z(bool),
    /// Relative phase of the late bin: `false` = 0, `true` = π.
    X(bool),
}

impl PairEncoding {
    fn bins(self) -> [Complex64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        match self {
            PairEncoding::Z(false) => [one, zero],
            PairEncoding::Z(true) => [zero, one],
            PairEncoding::X(false) => [one * h, one * h],
            PairEncoding::X(true) => [one * h, -one * h],
        }
    }
}

/// Slot amplitudes `[D1e, D2e, D1l, D2l]` of a photon entering from one port.
/// The beam splitter maps Alice's port to `(D1 + D2)/√2` and Bob's to
/// `(D1 − D2)/√2`.
fn slot_amplitudes(enc: PairEncoding, side: Side) -> [Complex64; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sign = match side {
        Side::Alice => 1.0,
        Side::Bob => -1.0,
    };
    let b = enc.bins();
    [b[0] * h, b[0] * (sign * h), b[1] * h, b[1] * (sign * h)]
}

/// Probability of the `|Ψ⁻⟩` click pattern given photon numbers per slot.
fn pattern_prob(occupation: [u32; 4], eff: [f64; 2], dark: f64) -> f64 {
    let mut c = [0.0; 4];
    for (slot, &n) in occupation.iter().enumerate() {
        let miss = (1.0 - eff[slot % 2]).powi(n as i32);
        c[slot] = 1.0 - (1.0 - dark) * miss;
    }
    psi_minus_prob(c)
}

/// Coincidence probability when Alice and Bob each emit exactly one photon
/// with the given encodings.
pub fn pair_yield(system: &SystemSpec, alice: PairEncoding, bob: PairEncoding) -> f64 {
    let eta_a = arm_transmittance(system, Side::Alice);
    let eta_b = arm_transmittance(system, Side::Bob);
    let eff = system.detectors.effective();
    let dark = system.detectors.dark_prob;
    let amp_a = slot_amplitudes(alice, Side::Alice);
    let amp_b = slot_amplitudes(bob, Side::Bob);

    let mut total = 0.0;

    // Both photons arrive: symmetrize over the two creation orders.
    let mut both = 0.0;
    for i in 0..4 {
        for j in i..4 {
            let mut occ = [0u32; 4];
            occ[i] += 1;
            occ[j] += 1;
            let p = if i == j {
                2.0 * (amp_a[i] * amp_b[i]).norm_sqr()
            } else {
                (amp_a[i] * amp_b[j] + amp_a[j] * amp_b[i]).norm_sqr()
            };
            if p > 0.0 {
                both += p * pattern_prob(occ, eff, dark);
            }
        }
    }
    total += eta_a * eta_b * both;

    // Exactly one photon arrives.
    for (amp, weight) in [
        (amp_a, eta_a * (1.0 - eta_b)),
        (amp_b, (1.0 - eta_a) * eta_b),
    ] {
        let mut single = 0.0;
        for i in 0..4 {
            let mut occ = [0u32; 4];
            occ[i] = 1;
            single += amp[i].norm_sqr() * pattern_prob(occ, eff, dark);
        }
        total += weight * single;
    }

    total += (1.0 - eta_a) * (1.0 - eta_b) * pattern_prob([0; 4], eff, dark);
    total
}

/// Yield and X-basis error rate of single-photon pairs, averaged over the
/// encoded phases. Opposite phases are the correct `|Ψ⁻⟩` outcome; the
/// configured X misalignment flips verdicts afterwards.
pub fn true_s11(system: &SystemSpec) -> (f64, f64) {
    let mut s = 0.0;
    let mut t_raw = 0.0;
    for a in [false, true] {
        for b in [false, true] {
            let p = 0.25 * pair_yield(system, PairEncoding::X(a), PairEncoding::X(b));
            s += p;
            if a == b {
                t_raw += p;
            }
        }
    }
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let em = system.misalignment_x;
    let t = (1.0 - em) * t_raw + em * (s - t_raw);
    (s, t / s)
}
