use std::fmt::Write as _;
use std::path::Path;

use anyhow::anyhow;
use mdiqkd::baseline::{bb84_rate, Bb84Spec, SourceKind};
use mdiqkd::decoy::{
    asymptotic_key, asymptotic_rate, expected_finite_key, finite_key, KeyRateReport, Mode,
    Observations,
};
use mdiqkd::model::{expected_observables, Gain, ProtocolParams, SystemSpec};
use mdiqkd::optimize::{optimize_with, OptimizationResult, OptimizeOptions};
use mdiqkd::simkit::simulate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::counts::{Count, CountsFile, CountsMeta, DataMode};
use crate::fail::{self, CliResult, Context, Kind};
use crate::output::emit;

pub const TOOL_VERSION: &str = concat!("mdiqkd ", env!("CARGO_PKG_VERSION"));

#[derive(Serialize)]
struct Meta<'a> {
    config_hash: String,
    tool_version: &'a str,
}

fn meta(cfg: &RunConfig) -> Meta<'static> {
    Meta {
        config_hash: cfg.hash(),
        tool_version: TOOL_VERSION,
    }
}

fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn write_out(cfg: &RunConfig, contents: &str) -> CliResult<()> {
    emit(cfg.run.out.as_deref(), contents).or_data("cannot write output")
}

#[derive(Serialize)]
struct ModelRecord<'a> {
    meta: Meta<'a>,
    system: SystemSpec,
    params: ProtocolParams,
    observables: Vec<ModelRow>,
}

#[derive(Serialize)]
struct ModelRow {
    pair: &'static str,
    prob: f64,
    #[serde(flatten)]
    gain: Gain,
    error_rate: f64,
}

/// Expected gains of every source pair: a table, or JSON with `json`.
pub fn model(cfg: &RunConfig, json: bool) -> CliResult<()> {
    let params = cfg.explicit_params("model")?;
    let obs = expected_observables(&cfg.system, &params);
    let rows: Vec<ModelRow> = obs
        .iter()
        .map(|(l, g)| ModelRow {
            pair: l.as_str(),
            prob: params.label_prob(l),
            gain: g,
            error_rate: g.error_rate(),
        })
        .collect();
    let record = ModelRecord {
        meta: meta(cfg),
        system: cfg.system,
        params,
        observables: rows,
    };
    let text = if json {
        to_json(&record)
    } else {
        let mut t = format!(
            "{} km, {:.2} dB\n{:<4} {:>12} {:>14} {:>14} {:>10}\n",
            cfg.system.channel.total_length,
            cfg.system.channel.total_loss_db(),
            "pair",
            "prob",
            "S",
            "T",
            "E",
        );
        for r in &record.observables {
            let _ = writeln!(
                t,
                "{:<4} {:>12.6e} {:>14.6e} {:>14.6e} {:>10.6}",
                r.pair, r.prob, r.gain.s, r.gain.t, r.error_rate
            );
        }
        t
    };
    write_out(cfg, &text)
}

/// Counts from sampling, or from the model in expected mode.
pub fn simulate_counts(cfg: &RunConfig) -> CliResult<CountsFile> {
    let params = cfg.explicit_params("simulate")?;
    let n = cfg.run.n_pairs;
    let mut meta = CountsMeta {
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        n_pairs: Count::Real(n),
        tool_version: TOOL_VERSION.into(),
        mode: DataMode::Expected,
        system: cfg.system,
        params,
    };
    if cfg.run.expected_mode {
        let obs = Observations::expected(&expected_observables(&cfg.system, &params), &params, n);
        return Ok(CountsFile::expected(meta, &obs));
    }
    if n.fract() != 0.0 || n > u64::MAX as f64 {
        return Err(fail::config(anyhow!(
            "run.n_pairs must be a whole number to sample, got {n}"
        )));
    }
    let stats = simulate(&cfg.system, &params, n as u64, cfg.run.seed)
        .map_err(|e| fail::core(e, Kind::Config))?;
    meta.n_pairs = Count::Int(stats.total_pairs);
    meta.mode = DataMode::Sampled;
    Ok(CountsFile::sampled(meta, &stats))
}

pub fn simulate_cmd(cfg: &RunConfig) -> CliResult<()> {
    let file = simulate_counts(cfg)?;
    write_out(cfg, &file.to_json())
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Input {
    Counts {
        sha256: String,
        config_hash: String,
        mode: DataMode,
        seed: u64,
    },
    Expected,
}

#[derive(Serialize)]
struct AnalysisRecord<'a> {
    meta: Meta<'a>,
    input: Input,
    n_pairs: f64,
    system: SystemSpec,
    params: ProtocolParams,
    report: KeyRateReport,
}

/// Names of the physical sections on which `file` and `cfg` disagree.
fn provenance_conflicts(cfg: &RunConfig, file: &CountsFile) -> CliResult<Vec<&'static str>> {
    let mut out = Vec::new();
    if file.meta.system != cfg.system {
        out.push("system");
    }
    if let Some(p) = cfg.protocol.params()? {
        if !cfg.protocol.optimize && p != file.meta.params {
            out.push("protocol");
        }
    }
    Ok(out)
}

pub fn analyze_report(
    cfg: &RunConfig,
    counts: Option<&Path>,
    override_provenance: bool,
    mode: Mode,
) -> CliResult<String> {
    let (input, obs, system, params) = match counts {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .or_data(&format!("cannot read counts file {}", path.display()))?;
            let file = CountsFile::parse(&text)?;
            let conflicts = provenance_conflicts(cfg, &file)?;
            let (system, params) = if conflicts.is_empty() {
                (file.meta.system, file.meta.params)
            } else if override_provenance {
                eprintln!(
                    "warning: counts file disagrees with config in [{}]; analysing with the config",
                    conflicts.join("], [")
                );
                let params = match (cfg.protocol.optimize, cfg.protocol.params()?) {
                    (false, Some(p)) => p,
                    _ => file.meta.params,
                };
                (cfg.system, params)
            } else {
                return Err(fail::data(anyhow!(
                    "counts file {} was produced with a different [{}] than the config; \
                     pass --override-provenance to analyse anyway",
                    path.display(),
                    conflicts.join("], [")
                )));
            };
            let obs = file.observations()?;
            let input = Input::Counts {
                sha256: hex::encode(Sha256::digest(text.as_bytes())),
                config_hash: file.meta.config_hash.clone(),
                mode: file.meta.mode,
                seed: file.meta.seed,
            };
            (input, obs, system, params)
        }
        None if cfg.run.expected_mode => {
            let params = cfg.explicit_params("analyze")?;
            let gains = expected_observables(&cfg.system, &params);
            let obs = Observations::expected(&gains, &params, cfg.run.n_pairs);
            (Input::Expected, obs, cfg.system, params)
        }
        None => {
            return Err(fail::config(anyhow!(
                "analyze needs a counts file, or --expected-mode to use model counts"
            )))
        }
    };
    let policies = &cfg.policies;
    let report = match mode {
        Mode::Finite => finite_key(
            &obs,
            &params,
            &system,
            &policies.fluctuation,
            &policies.analysis,
        ),
        Mode::Asymptotic => asymptotic_key(&obs, &params, &system, &policies.analysis),
    }
    .map_err(|e| fail::core(e, Kind::Data))?;
    Ok(to_json(&AnalysisRecord {
        meta: meta(cfg),
        input,
        n_pairs: obs.total_pairs,
        system,
        params,
        report,
    }))
}

pub fn analyze(
    cfg: &RunConfig,
    counts: Option<&Path>,
    override_provenance: bool,
    mode: Mode,
) -> CliResult<()> {
    let text = analyze_report(cfg, counts, override_provenance, mode)?;
    write_out(cfg, &text)
}

#[derive(Serialize)]
struct OptimizeRecord<'a> {
    meta: Meta<'a>,
    seed: u64,
    n_pairs: f64,
    options: OptimizeOptions,
    result: OptimizationResult,
    finite: KeyRateReport,
    asymptotic: KeyRateReport,
}

fn options(cfg: &RunConfig, objective: Mode, warm: Option<ProtocolParams>) -> OptimizeOptions {
    OptimizeOptions {
        starts: cfg.run.starts,
        budget: cfg.run.budget,
        objective,
        warm_starts: warm.into_iter().collect(),
        ..Default::default()
    }
}

fn optimize_at(
    cfg: &RunConfig,
    system: &SystemSpec,
    objective: Mode,
    warm: Option<ProtocolParams>,
) -> CliResult<OptimizationResult> {
    let p = &cfg.policies;
    optimize_with(
        system,
        cfg.run.n_pairs,
        &p.fluctuation,
        &p.analysis,
        cfg.run.seed,
        &options(cfg, objective, warm),
    )
    .map_err(|e| fail::core(e, Kind::Config))
}

pub fn optimize(cfg: &RunConfig, objective: Mode) -> CliResult<()> {
    let warm = cfg.protocol.params()?;
    let result = optimize_at(cfg, &cfg.system, objective, warm)?;
    let p = &cfg.policies;
    let best = result.best_params;
    let finite = expected_finite_key(
        &cfg.system,
        &best,
        cfg.run.n_pairs,
        &p.fluctuation,
        &p.analysis,
    )
    .map_err(|e| fail::core(e, Kind::Data))?;
    let asymptotic =
        asymptotic_rate(&cfg.system, &best, &p.analysis).map_err(|e| fail::core(e, Kind::Data))?;
    let record = OptimizeRecord {
        meta: meta(cfg),
        seed: cfg.run.seed,
        n_pairs: cfg.run.n_pairs,
        options: options(cfg, objective, warm),
        result,
        finite,
        asymptotic,
    };
    write_out(cfg, &to_json(&record))
}

pub const SWEEP_HEADER: &str =
    "distance_km,mdi_finite_bps,mdi_asymptotic_bps,bb84_ideal_sp,bb84_practical_sp,bb84_wcs_decoy";

/// One CSV row per distance. Every rate is in bits per second at the
/// system clock; MDI rates use expected counts.
pub fn sweep_csv(cfg: &RunConfig, distances: &[f64]) -> CliResult<String> {
    if distances.is_empty() {
        return Err(fail::config(anyhow!(
            "sweep needs at least one distance (--distances or run.distances)"
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(fail::config(anyhow!("invalid distance {d}")));
    }
    let explicit = match (cfg.protocol.optimize, cfg.protocol.params()?) {
        (false, Some(p)) => Some(p),
        _ => None,
    };
    let p = &cfg.policies;
    let clock = cfg.system.clock_rate;
    let mut csv = format!("{SWEEP_HEADER}\n");
    let (mut warm_f, mut warm_a) = (cfg.protocol.params()?, cfg.protocol.params()?);
    for &d in distances {
        let system = cfg.system.with_length(d);
        let (pf, pa) = match explicit {
            Some(params) => (params, params),
            None => {
                let f = optimize_at(cfg, &system, Mode::Finite, warm_f)?.best_params;
                let a = optimize_at(cfg, &system, Mode::Asymptotic, warm_a)?.best_params;
                (warm_f, warm_a) = (Some(f), Some(a));
                (f, a)
            }
        };
        let finite =
            expected_finite_key(&system, &pf, cfg.run.n_pairs, &p.fluctuation, &p.analysis)
                .map_err(|e| fail::core(e, Kind::Data))?;
        let asym =
            asymptotic_rate(&system, &pa, &p.analysis).map_err(|e| fail::core(e, Kind::Data))?;
        let spec = Bb84Spec {
            ec_efficiency: p.analysis.ec_efficiency,
            ..Bb84Spec::new(
                system.channel.total_loss_db(),
                system.detectors.mean_efficiency(),
                system.detectors.dark_prob,
            )
            .and_then(|s| s.with_p_x(cfg.run.bb84_p_x))
            .or_config("invalid baseline parameters")?
        };
        let mut bb84 = [0.0; 3];
        let sources = [
            SourceKind::IdealSp,
            SourceKind::PracticalSp { g2: cfg.run.g2 },
            SourceKind::WcsDecoy,
        ];
        for (slot, src) in bb84.iter_mut().zip(sources) {
            *slot = bb84_rate(&spec, src).or_config("invalid baseline parameters")? * clock;
        }
        let _ = writeln!(
            csv,
            "{d},{},{},{},{},{}",
            finite.rate_bps, asym.rate_bps, bb84[0], bb84[1], bb84[2]
        );
    }
    Ok(csv)
}

pub fn sweep(cfg: &RunConfig, distances: Option<Vec<f64>>) -> CliResult<()> {
    let list = distances.unwrap_or_else(|| cfg.run.distances.clone());
    let csv = sweep_csv(cfg, &list)?;
    write_out(cfg, &csv)
}
