//! Experiment configuration: JSON parsing with strict key checking.
//!
//! Unknown keys are rejected with a nearest-known-key suggestion so typos in
//! sweep scripts fail loudly instead of silently running defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use parabolic_control::problem::{DataFunction, ProblemSpec, SolveMethod, TargetSpec};
use parabolic_control::saddle::{SaddleVariant, WMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    ParseError(String),

    #[error("unknown key \"{key}\" in section \"{section}\"{}", suggestion.as_ref().map(|s| format!(" (did you mean \"{s}\"?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        section: String,
        suggestion: Option<String>,
    },

    #[error("invalid value for \"{key}\": {detail}")]
    InvalidValue { key: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl FnConfig {
    pub fn to_data_function(&self) -> Result<DataFunction, ConfigError> {
        DataFunction::from_catalog(&self.name, self.value, self.freq).ok_or_else(|| {
            ConfigError::InvalidValue {
                key: "name".into(),
                detail: format!(
                    "\"{}\" is not a catalog function (known: zero, constant, cos_product)",
                    self.name
                ),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(rename = "type")]
    pub kind: String,
    pub function: FnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub c: f64,
    pub y0: FnConfig,
    pub target: Option<TargetConfig>,
}

fn default_dim() -> usize {
    1
}

fn default_alpha() -> f64 {
    1.0
}

impl ProblemConfig {
    pub fn to_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let target = match &self.target {
            None => None,
            Some(t) => {
                let f = t.function.to_data_function()?;
                Some(match t.kind.as_str() {
                    "end_time" => TargetSpec::EndTime(f),
                    "tracking" => TargetSpec::Tracking(f),
                    other => {
                        return Err(ConfigError::InvalidValue {
                            key: "target.type".into(),
                            detail: format!("\"{other}\" (expected end_time or tracking)"),
                        })
                    }
                })
            }
        };
        Ok(ProblemSpec {
            dim: self.dim,
            t_final: self.t_final,
            lambda: self.lambda,
            alpha: self.alpha,
            c: self.c,
            y0: self.y0.to_data_function()?,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_elems: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_per_side: Option<usize>,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: SolveMethod,
    pub variant: SaddleVariant,
    pub w_mode: WMode,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolveMethod::Reduced,
            variant: SaddleVariant::Sym,
            w_mode: WMode::Approx,
            tol: 1e-10,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

pub const SWEEPABLE_KEYS: &[&str] = &[
    "c", "lambda", "alpha", "T", "n_steps", "n_elems", "n_per_side", "tol",
];

fn known_keys() -> BTreeMap<&'static str, Vec<&'static str>> {
    BTreeMap::from([
        ("", vec!["problem", "discretization", "solver", "sweep", "output"]),
        ("problem", vec!["dim", "T", "lambda", "alpha", "c", "y0", "target"]),
        ("problem.y0", vec!["name", "freq", "value"]),
        ("problem.target", vec!["type", "function"]),
        ("problem.target.function", vec!["name", "freq", "value"]),
        ("discretization", vec!["n_elems", "n_per_side", "n_steps", "taus"]),
        ("solver", vec!["method", "variant", "w_mode", "tol", "max_iters"]),
        ("sweep", vec!["parameter", "values"]),
        ("output", vec!["csv", "json"]),
    ])
}

fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn suggest(key: &str, known: &[&str]) -> Option<String> {
    known
        .iter()
        .map(|k| (levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 2)
        .map(|(_, k)| k.to_string())
}

fn check_keys(value: &Value, section: &str) -> Result<(), ConfigError> {
    let Some(obj) = value.as_object() else {
        return Ok(());
    };
    let table = known_keys();
    if let Some(known) = table.get(section) {
        for key in obj.keys() {
            if !known.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    section: if section.is_empty() {
                        "(top level)".into()
                    } else {
                        section.into()
                    },
                    suggestion: suggest(key, known),
                });
            }
        }
        for (key, child) in obj {
            let child_section = if section.is_empty() {
                key.clone()
            } else {
                format!("{section}.{key}")
            };
            check_keys(child, &child_section)?;
        }
    }
    Ok(())
}

/// Parse and validate a configuration from a JSON string.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::ParseError(e.to_string()))?;
    check_keys(&value, "")?;
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::ParseError(e.to_string()))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

/// Parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn validate_config(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.problem.target.is_none() {
        return Err(ConfigError::InvalidValue {
            key: "problem.target".into(),
            detail: "a target is mandatory; there is no silent default".into(),
        });
    }
    match cfg.problem.dim {
        1 => {
            if cfg.discretization.n_elems.is_none() {
                return Err(ConfigError::InvalidValue {
                    key: "discretization.n_elems".into(),
                    detail: "required for dim = 1".into(),
                });
            }
        }
        2 => {
            if cfg.discretization.n_per_side.is_none() {
                return Err(ConfigError::InvalidValue {
                    key: "discretization.n_per_side".into(),
                    detail: "required for dim = 2".into(),
                });
            }
        }
        other => {
            return Err(ConfigError::InvalidValue {
                key: "problem.dim".into(),
                detail: format!("{other} (expected 1 or 2)"),
            })
        }
    }
    if cfg.discretization.n_steps == 0 {
        return Err(ConfigError::InvalidValue {
            key: "discretization.n_steps".into(),
            detail: "must be at least 1".into(),
        });
    }
    if let Some(sweep) = &cfg.sweep {
        if !SWEEPABLE_KEYS.contains(&sweep.parameter.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: sweep.parameter.clone(),
                section: "sweep.parameter".into(),
                suggestion: suggest(&sweep.parameter, SWEEPABLE_KEYS),
            });
        }
        if sweep.values.is_empty() {
            return Err(ConfigError::InvalidValue {
                key: "sweep.values".into(),
                detail: "value list must be nonempty".into(),
            });
        }
    }
    // early invariant check so config errors surface before any run starts
    cfg.problem
        .to_spec()
        .and_then(|spec| {
            parabolic_control::problem::validate(spec).map_err(|e| ConfigError::InvalidValue {
                key: "problem".into(),
                detail: e.to_string(),
            })
        })
        .map(|_| ())
}

/// Apply one sweep value onto a copy of the configuration.
pub fn apply_sweep_value(
    cfg: &ExperimentConfig,
    parameter: &str,
    value: f64,
) -> Result<ExperimentConfig, ConfigError> {
    let mut out = cfg.clone();
    let as_count = |v: f64, key: &str| -> Result<usize, ConfigError> {
        if v.fract() != 0.0 || v < 1.0 {
            return Err(ConfigError::InvalidValue {
                key: key.into(),
                detail: format!("sweep value {v} is not a positive integer"),
            });
        }
        Ok(v as usize)
    };
    match parameter {
        "c" => out.problem.c = value,
        "lambda" => out.problem.lambda = value,
        "alpha" => out.problem.alpha = value,
        "T" => out.problem.t_final = value,
        "tol" => out.solver.tol = value,
        "n_steps" => out.discretization.n_steps = as_count(value, "n_steps")?,
        "n_elems" => out.discretization.n_elems = Some(as_count(value, "n_elems")?),
        "n_per_side" => out.discretization.n_per_side = Some(as_count(value, "n_per_side")?),
        other => {
            return Err(ConfigError::UnknownKey {
                key: other.into(),
                section: "sweep.parameter".into(),
                suggestion: suggest(other, SWEEPABLE_KEYS),
            })
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {
            "T": 1.0, "lambda": 1.0, "c": 1.0,
            "y0": {"name": "cos_product"},
            "target": {"type": "end_time", "function": {"name": "cos_product", "freq": 2.0}}
        },
        "discretization": {"n_elems": 16, "n_steps": 10}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.solver.method, SolveMethod::Reduced);
        assert_eq!(cfg.solver.tol, 1e-10);
        assert_eq!(cfg.problem.dim, 1);
        assert_eq!(cfg.problem.alpha, 1.0);
    }

    #[test]
    fn misspelled_lambda_is_suggested() {
        let text = MINIMAL.replace("\"lambda\"", "\"lamda\"");
        match parse_config_str(&text) {
            Err(ConfigError::UnknownKey {
                key, suggestion, ..
            }) => {
                assert_eq!(key, "lamda");
                assert_eq!(suggestion.as_deref(), Some("lambda"));
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn sweep_values_must_be_nonempty_and_known() {
        let mut cfg = parse_config_str(MINIMAL).unwrap();
        cfg.sweep = Some(SweepConfig {
            parameter: "c".into(),
            values: vec![10.0, 1.0, -1.0, -5.0],
        });
        let text = serde_json::to_string(&cfg).unwrap();
        let parsed = parse_config_str(&text).unwrap();
        assert_eq!(parsed.sweep.as_ref().unwrap().values.len(), 4);

        cfg.sweep = Some(SweepConfig {
            parameter: "nu".into(),
            values: vec![1.0],
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn target_is_mandatory() {
        let text = MINIMAL.replace(
            r#""target": {"type": "end_time", "function": {"name": "cos_product", "freq": 2.0}}"#,
            r#""target": null"#,
        );
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::InvalidValue { key, .. }) if key == "problem.target"
        ));
    }

    #[test]
    fn apply_sweep_changes_the_right_field() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let c5 = apply_sweep_value(&cfg, "c", -5.0).unwrap();
        assert_eq!(c5.problem.c, -5.0);
        let n = apply_sweep_value(&cfg, "n_steps", 200.0).unwrap();
        assert_eq!(n.discretization.n_steps, 200);
        assert!(apply_sweep_value(&cfg, "n_steps", 2.5).is_err());
    }

    #[test]
    fn problem_invariants_enforced_at_parse_time() {
        let text = MINIMAL.replace("\"lambda\": 1.0", "\"lambda\": 0.0");
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::InvalidValue { key, .. }) if key == "problem"
        ));
    }
}
