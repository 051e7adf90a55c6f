//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use mdiqkd::decoy::{AnalysisPolicy, FluctuationPolicy};
use mdiqkd::model::{ProtocolParams, SystemSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::{self, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_system")]
    pub system: SystemSpec,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub run: RunSection,
}

fn default_system() -> SystemSpec {
    SystemSpec::standard_fiber(102.0)
}

/// Intensities (mean photon numbers) and selection probabilities. With
/// `optimize = true` the parameters are searched for and any given values
/// seed the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default)]
    pub optimize: bool,
    pub mu_x: Option<f64>,
    pub mu_y: Option<f64>,
    pub mu_z: Option<f64>,
    pub p_x: Option<f64>,
    pub p_y: Option<f64>,
    pub p_z: Option<f64>,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            optimize: false,
            mu_x: Some(0.049),
            mu_y: Some(0.189),
            mu_z: Some(0.891),
            p_x: Some(0.128),
            p_y: Some(0.025),
            p_z: Some(0.827),
        }
    }
}

impl ProtocolSection {
    /// The explicit parameters, if all six are given.
    pub fn params(&self) -> CliResult<Option<ProtocolParams>> {
        let fields = [
            ("mu_x", self.mu_x),
            ("mu_y", self.mu_y),
            ("mu_z", self.mu_z),
            ("p_x", self.p_x),
            ("p_y", self.p_y),
            ("p_z", self.p_z),
        ];
        let given = fields.iter().filter(|(_, v)| v.is_some()).count();
        if given == 0 {
            return Ok(None);
        }
        if let Some((name, _)) = fields.iter().find(|(_, v)| v.is_none()) {
            return Err(fail::config(anyhow!(
                "protocol.{name} is missing; give all six parameters or none"
            )));
        }
        let v = fields.map(|(_, v)| v.unwrap_or_default());
        ProtocolParams::new(v[0], v[1], v[2], v[3], v[4], v[5])
            .map(Some)
            .or_config("invalid [protocol] section")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policies {
    #[serde(default)]
    pub fluctuation: FluctuationPolicy,
    #[serde(default)]
    pub analysis: AnalysisPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Pulse pairs sent, `N_t`.
    #[serde(default = "default_pairs")]
    pub n_pairs: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Use expected counts from the closed-form model instead of sampling.
    #[serde(default)]
    pub expected_mode: bool,
    /// Optimizer evaluations, shared among starts.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Fiber lengths in km for `sweep`.
    #[serde(default)]
    pub distances: Vec<f64>,
    /// `g²(0)` of the practical single-photon source baseline.
    #[serde(default = "default_g2")]
    pub g2: f64,
    /// X-basis probability of the BB84 baselines.
    #[serde(default = "default_bb84_p_x")]
    pub bb84_p_x: f64,
    /// Output path; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_pairs() -> f64 {
    1e9
}
fn default_seed() -> u64 {
    1
}
fn default_budget() -> usize {
    32 * 400
}
fn default_starts() -> usize {
    32
}
fn default_g2() -> f64 {
    0.01
}
fn default_bb84_p_x() -> f64 {
    0.5
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_pairs: default_pairs(),
            seed: default_seed(),
            expected_mode: false,
            budget: default_budget(),
            starts: default_starts(),
            distances: Vec::new(),
            g2: default_g2(),
            bb84_p_x: default_bb84_p_x(),
            out: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: default_system(),
            protocol: ProtocolSection::default(),
            policies: Policies::default(),
            run: RunSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pairs: Option<f64>,
    pub distance: Option<f64>,
    pub out: Option<PathBuf>,
    pub expected_mode: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .or_config(&format!("cannot read config {}", p.display()))?;
                toml::from_str(&text).or_config(&format!("invalid config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = ov.seed {
            cfg.run.seed = s;
        }
        if let Some(n) = ov.pairs {
            cfg.run.n_pairs = n;
        }
        if let Some(d) = ov.distance {
            cfg.system.channel.total_length = d;
        }
        if let Some(o) = &ov.out {
            cfg.run.out = Some(o.clone());
        }
        cfg.run.expected_mode |= ov.expected_mode;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.system
            .validate()
            .or_config("invalid [system] section")?;
        self.protocol.params()?;
        self.policies
            .fluctuation
            .validate()
            .or_config("invalid [policies.fluctuation]")?;
        self.policies
            .analysis
            .validate()
            .or_config("invalid [policies.analysis]")?;
        let r = &self.run;
        if !(r.n_pairs.is_finite() && r.n_pairs >= 1.0) {
            return Err(fail::config(anyhow!(
                "run.n_pairs must be >= 1, got {}",
                r.n_pairs
            )));
        }
        if !(r.g2 >= 0.0 && r.g2.is_finite()) {
            return Err(fail::config(anyhow!("run.g2 must be >= 0, got {}", r.g2)));
        }
        if !(r.bb84_p_x > 0.0 && r.bb84_p_x < 1.0) {
            return Err(fail::config(anyhow!(
                "run.bb84_p_x must lie in (0, 1), got {}",
                r.bb84_p_x
            )));
        }
        if let Some(d) = r.distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(fail::config(anyhow!(
                "run.distances contains invalid length {d}"
            )));
        }
        if let Some(out) = &r.out {
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
            if let Some(dir) = parent {
                if !dir.is_dir() {
                    return Err(fail::config(anyhow!(
                        "output directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Explicit parameters, or an error naming the command that needs them.
    pub fn explicit_params(&self, command: &str) -> CliResult<ProtocolParams> {
        match (self.protocol.optimize, self.protocol.params()?) {
            (false, Some(p)) => Ok(p),
            _ => Err(fail::config(anyhow!(
                "`{command}` needs explicit [protocol] parameters with optimize = false"
            ))),
        }
    }

    /// Hex SHA-256 of the configuration without its output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
