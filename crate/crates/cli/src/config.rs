//! Run configuration files and sweep specifications.

use std::collections::BTreeMap;
use std::path::Path;

use defend_core::training::default_beta_grid;
use defend_core::{BaselineConfig, GeneratorConfig, Reduction, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Share of nodes flagged as anomalous; defaults to the true rate.
    pub contamination: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalOptions,
    /// Seeds used by `ablate` and `sweep`.
    pub seeds: Vec<u64>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            eval: EvalOptions::default(),
            seeds: (0..10).collect(),
            out_dir: None,
        }
    }
}

fn section(e: defend_core::Error, name: &str) -> CliError {
    match e {
        defend_core::Error::Config { field, reason } => {
            CliError::Config(format!("invalid config field `{name}.{field}`: {reason}"))
        }
        other => other.into(),
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.generator
            .validate()
            .map_err(|e| section(e, "generator"))?;
        self.train.validate().map_err(|e| section(e, "train"))?;
        self.baseline
            .validate()
            .map_err(|e| section(e, "baseline"))?;
        if let Some(c) = self.eval.contamination {
            if !(0.0..=1.0).contains(&c) {
                return Err(CliError::Config(
                    "invalid config field `eval.contamination`: must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Applies the global `--seed` and `--reduction` flags.
    pub fn apply_overrides(&mut self, seed: Option<u64>, reduction: Option<Reduction>) {
        if let Some(s) = seed {
            self.generator.seed = s;
            self.train.seed = s;
            self.baseline.seed = s;
            self.seeds = vec![s];
        }
        if let Some(r) = reduction {
            self.train.reduction = r;
            self.baseline.reduction = r;
        }
    }
}

fn read_json(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Loads a run config; a missing path means all defaults.
pub fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    serde_json::from_str(&read_json(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    /// Dotted config path (or `alpha`/`beta`/`gamma`) → values.
    pub axes: BTreeMap<String, Vec<Value>>,
    /// Overrides `base.seeds` when present.
    pub seeds: Option<Vec<u64>>,
}

pub fn load_sweep_spec(path: Option<&Path>) -> CliResult<SweepSpec> {
    let Some(path) = path else {
        return Ok(SweepSpec::default());
    };
    serde_json::from_str(&read_json(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn expand_axis_name(name: &str) -> String {
    match name {
        "alpha" | "beta" | "gamma" => format!("train.weights.{name}"),
        "variant" | "learning_rate" => format!("train.{name}"),
        "lambda" | "regularizer" => format!("baseline.{name}"),
        other => other.to_string(),
    }
}

/// Returns a copy of `base` with the field at dotted `path` set to `value`.
pub fn with_field(base: &RunConfig, path: &str, value: &Value) -> CliResult<RunConfig> {
    let mut doc = serde_json::to_value(base).expect("configs serialise");
    let mut slot = &mut doc;
    for part in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::Config(format!("unknown sweep axis `{path}`")))?;
    }
    *slot = value.clone();
    serde_json::from_value(doc)
        .map_err(|e| CliError::Config(format!("sweep axis `{path}` = {value}: {e}")))
}

/// One point of the cartesian product: axis assignments in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub assignment: Vec<(String, Value)>,
    pub config: RunConfig,
}

pub fn expand_sweep(spec: &SweepSpec) -> CliResult<Vec<SweepPoint>> {
    let mut axes: Vec<(String, Vec<Value>)> = spec
        .axes
        .iter()
        .map(|(k, v)| (expand_axis_name(k), v.clone()))
        .collect();
    if axes.is_empty() {
        let grid = default_beta_grid(spec.base.train.reduction);
        axes.push((
            expand_axis_name("beta"),
            grid.into_iter().map(Value::from).collect(),
        ));
    }
    if let Some((name, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
        return Err(CliError::Config(format!(
            "sweep axis `{name}` has no values"
        )));
    }
    let mut points = vec![SweepPoint {
        assignment: Vec::new(),
        config: spec.base.clone(),
    }];
    for (name, values) in &axes {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut assignment = p.assignment.clone();
                assignment.push((name.clone(), v.clone()));
                next.push(SweepPoint {
                    assignment,
                    config: with_field(&p.config, name, v)?,
                });
            }
        }
        points = next;
    }
    for p in &points {
        p.config.validate()?;
    }
    Ok(points)
}
