//! Point-to-point BB84 reference rates under a linear-loss model, for three
//! source types.
//!
//! A passive beam splitter sends each arriving photon to the X detectors
//! with probability `p_x` and to the Z detectors otherwise. There is no
//! misalignment and no insertion loss.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{h2, Basis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceKind {
    /// Perfect single-photon source.
    IdealSp,
    /// Single-photon source whose multi-photon emissions, set by `g2`, are
    /// all treated as insecure.
    PracticalSp { g2: f64 },
    /// Weak coherent pulses with perfect decoy-state estimation.
    WcsDecoy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bb84Spec {
    pub loss_db: f64,
    pub detector_efficiency: f64,
    pub dark_prob: f64,
    #[serde(default = "half")]
    pub p_x: f64,
    #[serde(default = "default_f")]
    pub ec_efficiency: f64,
}

fn half() -> f64 {
    0.5
}
fn default_f() -> f64 {
    1.16
}

impl Bb84Spec {
    pub fn new(loss_db: f64, detector_efficiency: f64, dark_prob: f64) -> Result<Self> {
        let s = Self {
            loss_db,
            detector_efficiency,
            dark_prob,
            p_x: half(),
            ec_efficiency: default_f(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_p_x(mut self, p_x: f64) -> Result<Self> {
        self.p_x = p_x;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.loss_db >= 0.0 && self.loss_db.is_finite(),
            "loss_db",
            || format!("must be finite and >= 0, got {}", self.loss_db),
        )?;
        ensure(
            self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0,
            "detector_efficiency",
            || format!("must lie in (0, 1], got {}", self.detector_efficiency),
        )?;
        ensure((0.0..0.5).contains(&self.dark_prob), "dark_prob", || {
            format!("must lie in [0, 0.5), got {}", self.dark_prob)
        })?;
        ensure(self.p_x > 0.0 && self.p_x < 1.0, "p_x", || {
            format!("must lie in (0, 1), got {}", self.p_x)
        })?;
        ensure(self.ec_efficiency >= 1.0, "ec_efficiency", || {
            format!("must be >= 1, got {}", self.ec_efficiency)
        })
    }

    /// End-to-end transmittance including detector efficiency.
    pub fn transmittance(&self) -> f64 {
        self.detector_efficiency * 10f64.powf(-self.loss_db / 10.0)
    }

    pub fn p_z(&self) -> f64 {
        1.0 - self.p_x
    }

    fn basis_prob(&self, basis: Basis) -> f64 {
        match basis {
            Basis::X => self.p_x,
            Basis::Z => self.p_z(),
        }
    }

    fn sift(&self) -> f64 {
        self.p_x * self.p_z()
    }
}

/// Single-photon gain `S` and bit error rate `e` in `basis`.
pub fn bb84_gain_error(spec: &Bb84Spec, basis: Basis) -> Result<(f64, f64)> {
    spec.validate()?;
    let d = spec.dark_prob;
    let arrive = spec.transmittance() * spec.basis_prob(basis);
    let s = arrive + 2.0 * d * (1.0 - d) * (1.0 - arrive);
    if s <= 0.0 {
        return Err(Error::ZeroGain);
    }
    Ok((s, d * (1.0 - d) * (1.0 - arrive) / s))
}

pub fn ideal_sp_rate(spec: &Bb84Spec) -> Result<f64> {
    let (_, e_x) = bb84_gain_error(spec, Basis::X)?;
    let (s_z, e_z) = bb84_gain_error(spec, Basis::Z)?;
    Ok((spec.sift() * s_z * (1.0 - h2(e_x) - h2(e_z))).max(0.0))
}

/// Tagged rate with multi-photon fraction `g2 / 2`.
pub fn practical_sp_rate(spec: &Bb84Spec, g2: f64) -> Result<f64> {
    ensure(g2 >= 0.0 && g2.is_finite(), "g2", || {
        format!("must be >= 0, got {g2}")
    })?;
    let (_, e_x) = bb84_gain_error(spec, Basis::X)?;
    let (s_z, e_z) = bb84_gain_error(spec, Basis::Z)?;
    let omega = 1.0 - 0.5 * g2 / s_z;
    if omega <= 0.0 || e_x / omega >= 0.5 {
        return Ok(0.0);
    }
    Ok((spec.sift() * s_z * (omega * (1.0 - h2(e_x / omega)) - h2(e_z))).max(0.0))
}

/// Rate at signal intensity `mu` with exact single-photon parameters.
pub fn wcs_decoy_rate_at(spec: &Bb84Spec, mu: f64) -> Result<f64> {
    spec.validate()?;
    ensure(mu > 0.0 && mu <= 1.0, "mu", || {
        format!("must lie in (0, 1], got {mu}")
    })?;
    let d = spec.dark_prob;
    let y0 = 2.0 * d * (1.0 - d);
    let eta_z = spec.transmittance() * spec.p_z();
    let eta_x = spec.transmittance() * spec.p_x;
    let y1_z = 1.0 - (1.0 - y0) * (1.0 - eta_z);
    let y1_x = 1.0 - (1.0 - y0) * (1.0 - eta_x);
    let e1 = 0.5 * y0 * (1.0 - eta_x) / y1_x;
    let q = 1.0 - (1.0 - y0) * (-eta_z * mu).exp();
    let eq = 0.5 * y0 * (-eta_z * mu).exp();
    let bracket = mu * (-mu).exp() * y1_z * (1.0 - h2(e1)) - spec.ec_efficiency * q * h2(eq / q);
    Ok((spec.sift() * bracket).max(0.0))
}

/// [`wcs_decoy_rate_at`] maximised over `mu ∈ (0, 1]`.
pub fn wcs_decoy_rate(spec: &Bb84Spec) -> Result<f64> {
    const GRID: usize = 1000;
    let mut best = 0.0f64;
    let mut best_mu = 1.0;
    for i in 1..=GRID {
        let mu = i as f64 / GRID as f64;
        let r = wcs_decoy_rate_at(spec, mu)?;
        if r > best {
            best = r;
            best_mu = mu;
        }
    }
    if best == 0.0 {
        return Ok(0.0);
    }
    // Golden-section refinement around the best grid point.
    let (mut a, mut b) = (
        (best_mu - 1.0 / GRID as f64).max(1e-9),
        (best_mu + 1.0 / GRID as f64).min(1.0),
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if wcs_decoy_rate_at(spec, c)? > wcs_decoy_rate_at(spec, e)? {
            b = e;
        } else {
            a = c;
        }
    }
    Ok(best.max(wcs_decoy_rate_at(spec, 0.5 * (a + b))?))
}

pub fn bb84_rate(spec: &Bb84Spec, source: SourceKind) -> Result<f64> {
    match source {
        SourceKind::IdealSp => ideal_sp_rate(spec),
        SourceKind::PracticalSp { g2 } => practical_sp_rate(spec, g2),
        SourceKind::WcsDecoy => wcs_decoy_rate(spec),
    }
}

/// Largest distance in `[0, max_km]` with a positive rate, to 1e-3 km, for
/// fiber of `db_per_km` attenuation. Rates are taken to vanish monotonically
/// with distance.
pub fn cutoff_distance(
    template: &Bb84Spec,
    db_per_km: f64,
    source: SourceKind,
    max_km: f64,
) -> Result<f64> {
    ensure(db_per_km > 0.0, "db_per_km", || {
        format!("must be positive, got {db_per_km}")
    })?;
    let positive = |l: f64| -> Result<bool> {
        let spec = Bb84Spec {
            loss_db: l * db_per_km,
            ..*template
        };
        Ok(bb84_rate(&spec, source)? > 0.0)
    };
    if !positive(0.0)? {
        return Ok(0.0);
    }
    if positive(max_km)? {
        return Ok(max_km);
    }
    let (mut lo, mut hi) = (0.0, max_km);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if positive(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
