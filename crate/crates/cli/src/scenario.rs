//! Scenario files: TOML by default, JSON when the file ends in `.json` or
//! starts with `{`. Both encode the same schema.

use crate::error::{CliError, Result};
use fblq_core::blocklength::{pauli_source, SourceModel, Task, XiGrid};
use fblq_core::hierarchy::{InstanceKind, SuiteEntry};
use fblq_core::linalg::{c, HermitianOperator};
use fblq_core::states::{CqState, DensityOperator};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PAULI_PRESET: &str = "pauli-eavesdrop";

/// Row-major complex matrix, entries as `[re, im]`.
pub type Matrix = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSpec>,
}

/// Either `preset` (with `p`) or `probabilities` with one state per symbol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Matrix>>,
}

/// A state and a reference operator, with optional bipartite dims for the
/// conditional quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub rho: Matrix,
    pub sigma: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Dh,
    Dmax,
    Hmin,
    Hh,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    /// Exact binomial bounds instead of the general ones (extraction only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Monte Carlo samples for the compression error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<XiGrid>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: String,
    pub dim: usize,
    pub first_seed: u64,
    pub count: u64,
    pub eps: f64,
    pub delta: f64,
}

fn is_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('{')
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, is_json(path, &text)).map_err(|message| CliError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str, json: bool) -> std::result::Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario types serialize to TOML")
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario types serialize to JSON")
    }

    pub fn source(&self) -> Result<&SourceSpec> {
        self.source
            .as_ref()
            .ok_or_else(|| CliError::usage("scenario has no [source] table"))
    }
}

fn operator(m: &Matrix, field: &str) -> Result<HermitianOperator> {
    let rows: Vec<Vec<_>> = m
        .iter()
        .map(|r| r.iter().map(|&[re, im]| c(re, im)).collect())
        .collect();
    HermitianOperator::from_complex_rows(&rows).map_err(|e| CliError::usage(format!("{field}: {e}")))
}

fn density(m: &Matrix, field: &str) -> Result<DensityOperator> {
    DensityOperator::new(operator(m, field)?).map_err(|e| CliError::usage(format!("{field}: {e}")))
}

impl SourceSpec {
    pub fn cq(&self) -> Result<CqState> {
        match (&self.preset, &self.probabilities, &self.states) {
            (Some(_), None, None) => Ok(self.model()?.cq),
            (None, Some(p), Some(states)) => {
                if p.len() != states.len() {
                    return Err(CliError::usage(format!(
                        "source: {} probabilities but {} states",
                        p.len(),
                        states.len()
                    )));
                }
                let entries = p
                    .iter()
                    .zip(states)
                    .enumerate()
                    .map(|(x, (&px, m))| Ok((px, density(m, &format!("source.states[{x}]"))?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(CqState::new(entries)?)
            }
            _ => Err(CliError::usage(
                "source: give either `preset` or both `probabilities` and `states`",
            )),
        }
    }

    pub fn model(&self) -> Result<SourceModel> {
        match self.preset.as_deref() {
            Some(PAULI_PRESET) => {
                let p = self
                    .p
                    .ok_or_else(|| CliError::usage("source.p is required for the pauli-eavesdrop preset"))?;
                Ok(pauli_source(p)?)
            }
            Some(other) => Err(CliError::usage(format!(
                "source.preset: unknown preset '{other}', expected '{PAULI_PRESET}'"
            ))),
            None => Ok(SourceModel::new(self.cq()?)?),
        }
    }
}

impl PairSpec {
    pub fn rho(&self) -> Result<DensityOperator> {
        density(&self.rho, "pair.rho")
    }

    pub fn sigma(&self) -> Result<HermitianOperator> {
        operator(&self.sigma, "pair.sigma")
    }
}

fn kind(s: &str, field: &str) -> Result<InstanceKind> {
    s.parse().map_err(|e| CliError::usage(format!("{field}: {e}")))
}

impl SuiteSpec {
    pub fn entries(&self) -> Result<Vec<SuiteEntry>> {
        if let Some(i) = &self.instance {
            if !self.blocks.is_empty() {
                return Err(CliError::usage("suite: give either `instance` or `blocks`, not both"));
            }
            return Ok(vec![SuiteEntry {
                kind: kind(&i.kind, "suite.instance.kind")?,
                dim: i.dim,
                seed: i.seed,
                eps: i.eps,
                delta: i.delta,
            }]);
        }
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let k = kind(&block.kind, &format!("suite.blocks[{b}].kind"))?;
            out.extend((block.first_seed..block.first_seed + block.count).map(|seed| SuiteEntry {
                kind: k,
                dim: block.dim,
                seed,
                eps: block.eps,
                delta: block.delta,
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPLICIT: &str = r#"
[source]
probabilities = [0.5, 0.5]
states = [
  [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
  [[[0.5, 0.0], [0.0, -0.5]], [[0.0, 0.5], [0.5, 0.0]]],
]

[params]
epsilon = 0.1
eta = 0.05
task = "compression"
n_min = 100
n_max = 10000
n_points = 5

[params.grid]
points = 32
golden_steps = 10

[suite]
blocks = [{ kind = "generic", dim = 2, first_seed = 3, count = 2, eps = 0.3, delta = 0.1 }]
"#;

    #[test]
    fn toml_round_trip() {
        let s = Scenario::parse(EXPLICIT, false).unwrap();
        let again = Scenario::parse(&s.to_toml(), false).unwrap();
        assert_eq!(s, again);
        let json = Scenario::parse(&s.to_json(), true).unwrap();
        assert_eq!(s, json);
    }

    #[test]
    fn explicit_source_builds() {
        let s = Scenario::parse(EXPLICIT, false).unwrap();
        let cq = s.source().unwrap().cq().unwrap();
        assert_eq!((cq.num_symbols(), cq.dim_b()), (2, 2));
        assert_eq!(s.suite.unwrap().entries().unwrap().len(), 2);
    }

    #[test]
    fn preset_source_builds() {
        let s = Scenario::parse("[source]\npreset = \"pauli-eavesdrop\"\np = 0.05\n", false).unwrap();
        let m = s.source().unwrap().model().unwrap();
        assert!((m.h - 0.713603).abs() < 1e-6);
        let bad = Scenario::parse("[source]\npreset = \"bb84\"\n", false).unwrap();
        assert!(bad.source().unwrap().model().is_err());
    }

    #[test]
    fn parse_errors_name_the_location() {
        let err = Scenario::parse("[suite]\ninstance = { kind = \"cq\", dim = 2, seed = \"x1\", eps = 0.3, delta = 0.1 }\n", false)
            .unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        let err = Scenario::parse("{\n \"params\": {\"epsilon\": \"a\"}\n}", true).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        assert!(Scenario::parse("[params]\nepsilonn = 0.1\n", false).is_err());
    }

    #[test]
    fn non_hermitian_state_rejected() {
        let s = Scenario::parse(
            "[source]\nprobabilities = [1.0]\nstates = [[[[0.5, 0.0], [0.1, 0.0]], [[0.0, 0.0], [0.5, 0.0]]]]\n",
            false,
        )
        .unwrap();
        let err = s.source().unwrap().cq().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("source.states[0]"));
    }
}
