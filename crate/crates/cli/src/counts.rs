//! Counts file schema.

use std::collections::BTreeMap;

use anyhow::anyhow;
use mdiqkd::decoy::{Observations, Observed};
use mdiqkd::model::{Label, ProtocolParams, SystemSpec};
use mdiqkd::simkit::{PairCounts, SourcePairStats};
use serde::{Deserialize, Serialize};

use crate::fail::{self, CliResult};

/// A count: integral when sampled, real when taken from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, expecting = "a non-negative count")]
pub enum Count {
    Int(u64),
    Real(f64),
}

impl Count {
    pub fn value(self) -> f64 {
        match self {
            Count::Int(n) => n as f64,
            Count::Real(x) => x,
        }
    }

    fn int(self) -> Option<u64> {
        match self {
            Count::Int(n) => Some(n),
            Count::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Sampled,
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsMeta {
    pub config_hash: String,
    pub seed: u64,
    pub n_pairs: Count,
    pub tool_version: String,
    pub mode: DataMode,
    pub system: SystemSpec,
    pub params: ProtocolParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelCounts {
    pub sent: Count,
    pub coincidences: Count,
    pub errors: Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFile {
    pub meta: CountsMeta,
    pub stats: BTreeMap<String, LabelCounts>,
    /// Pulse pairs outside the eight tracked source pairs.
    pub discarded: Count,
}

impl CountsFile {
    pub fn sampled(meta: CountsMeta, s: &SourcePairStats) -> Self {
        let stats = Label::ALL
            .into_iter()
            .map(|l| {
                let c = s.get(l);
                let rec = LabelCounts {
                    sent: Count::Int(c.sent),
                    coincidences: Count::Int(c.coincidences),
                    errors: Count::Int(c.errors),
                };
                (l.as_str().to_owned(), rec)
            })
            .collect();
        Self {
            meta,
            stats,
            discarded: Count::Int(s.discarded),
        }
    }

    pub fn expected(meta: CountsMeta, obs: &Observations) -> Self {
        let tracked: f64 = Label::ALL.into_iter().map(|l| obs.get(l).sent).sum();
        let stats = Label::ALL
            .into_iter()
            .map(|l| {
                let o = obs.get(l);
                let rec = LabelCounts {
                    sent: Count::Real(o.sent),
                    coincidences: Count::Real(o.coincidences),
                    errors: Count::Real(o.errors),
                };
                (l.as_str().to_owned(), rec)
            })
            .collect();
        Self {
            meta,
            stats,
            discarded: Count::Real((obs.total_pairs - tracked).max(0.0)),
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: CountsFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            fail::data(anyhow!(
                "counts file schema error at `{path}`: {}",
                e.inner()
            ))
        })?;
        file.check_labels()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("counts serialize");
        s.push('\n');
        s
    }

    fn check_labels(&self) -> CliResult<()> {
        if let Some(k) = self.stats.keys().find(|k| Label::parse(k).is_none()) {
            return Err(fail::data(anyhow!(
                "counts file schema error at `stats.{k}`: unknown source pair"
            )));
        }
        if let Some(l) = Label::ALL
            .into_iter()
            .find(|l| !self.stats.contains_key(l.as_str()))
        {
            return Err(fail::data(anyhow!(
                "counts file schema error at `stats.{l}`: missing source pair"
            )));
        }
        Ok(())
    }

    fn record(&self, l: Label) -> LabelCounts {
        self.stats[l.as_str()]
    }

    /// Exact integer statistics of a sampled file.
    pub fn source_stats(&self) -> CliResult<SourcePairStats> {
        let int = |c: Count, field: String| {
            c.int().ok_or_else(|| {
                fail::data(anyhow!("`{field}` must be an integer in a sampled file"))
            })
        };
        let mut s = SourcePairStats::empty(
            int(self.meta.n_pairs, "meta.n_pairs".into())?,
            self.meta.seed,
        );
        s.discarded = int(self.discarded, "discarded".into())?;
        for l in Label::ALL {
            let r = self.record(l);
            *s.get_mut(l) = PairCounts {
                sent: int(r.sent, format!("stats.{l}.sent"))?,
                coincidences: int(r.coincidences, format!("stats.{l}.coincidences"))?,
                errors: int(r.errors, format!("stats.{l}.errors"))?,
            };
        }
        s.validate()
            .map_err(|e| fail::data(anyhow!(e).context("inconsistent counts")))?;
        Ok(s)
    }

    pub fn observations(&self) -> CliResult<Observations> {
        if self.meta.mode == DataMode::Sampled {
            return Ok(Observations::from(&self.source_stats()?));
        }
        for l in Label::ALL {
            let r = self.record(l);
            for (name, c) in [
                ("sent", r.sent),
                ("coincidences", r.coincidences),
                ("errors", r.errors),
            ] {
                let v = c.value();
                if !(v.is_finite() && v >= 0.0) {
                    return Err(fail::data(anyhow!(
                        "`stats.{l}.{name}` must be finite and >= 0, got {v}"
                    )));
                }
            }
            let (s, c, e) = (r.sent.value(), r.coincidences.value(), r.errors.value());
            if e > c || c > s {
                return Err(fail::data(anyhow!(
                    "`stats.{l}` needs errors <= coincidences <= sent, got {e}, {c}, {s}"
                )));
            }
        }
        let n = self.meta.n_pairs.value();
        if !(n.is_finite() && n >= 1.0) {
            return Err(fail::data(anyhow!("`meta.n_pairs` must be >= 1, got {n}")));
        }
        Ok(Observations::new(n, |l| {
            let r = self.record(l);
            Observed {
                sent: r.sent.value(),
                coincidences: r.coincidences.value(),
                errors: r.errors.value(),
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(mode: DataMode, n: Count) -> CountsMeta {
        CountsMeta {
            config_hash: "00".into(),
            seed: 7,
            n_pairs: n,
            tool_version: "0".into(),
            mode,
            system: SystemSpec::standard_fiber(50.0),
            params: ProtocolParams::new(0.1, 0.3, 0.6, 0.2, 0.1, 0.5).unwrap(),
        }
    }

    fn stats() -> SourcePairStats {
        let mut s = SourcePairStats::empty(1000, 7);
        for (i, l) in Label::ALL.into_iter().enumerate() {
            *s.get_mut(l) = PairCounts {
                sent: 100,
                coincidences: 10 + i as u64,
                errors: i as u64,
            };
        }
        s.discarded = 200;
        s
    }

    #[test]
    fn sampled_round_trip_is_exact() {
        let s = stats();
        let f = CountsFile::sampled(meta(DataMode::Sampled, Count::Int(1000)), &s);
        let back = CountsFile::parse(&f.to_json()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.source_stats().unwrap(), s);
    }

    #[test]
    fn expected_round_trip_is_exact() {
        let obs = Observations::new(1e12, |l| Observed {
            sent: 1e11 + l.index() as f64 / 3.0,
            coincidences: 12_345.678_9,
            errors: 0.1 + 0.2,
        });
        let f = CountsFile::expected(meta(DataMode::Expected, Count::Real(1e12)), &obs);
        let back = CountsFile::parse(&f.to_json()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.observations().unwrap(), obs);
    }

    #[test]
    fn schema_error_names_field() {
        let f = CountsFile::sampled(meta(DataMode::Sampled, Count::Int(1000)), &stats());
        let text = f
            .to_json()
            .replacen("\"coincidences\"", "\"coincidence\"", 1);
        let e = CountsFile::parse(&text).unwrap_err().to_string();
        assert!(e.contains("stats.oo"), "{e}");
        let text = f
            .to_json()
            .replacen("\"errors\": 0", "\"errors\": \"zero\"", 1);
        let e = CountsFile::parse(&text).unwrap_err().to_string();
        assert!(e.contains("stats.oo.errors"), "{e}");
    }

    #[test]
    fn missing_label_named() {
        let mut f = CountsFile::sampled(meta(DataMode::Sampled, Count::Int(1000)), &stats());
        f.stats.remove("yy");
        let e = CountsFile::parse(&f.to_json()).unwrap_err().to_string();
        assert!(e.contains("stats.yy"), "{e}");
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let mut s = stats();
        s.get_mut(Label::Zz).errors = 99;
        let f = CountsFile::sampled(meta(DataMode::Sampled, Count::Int(1000)), &s);
        assert!(f.source_stats().is_err());
    }
}
