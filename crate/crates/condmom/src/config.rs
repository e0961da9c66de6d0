//! Experiment configuration, read from TOML.
//!
//! ```toml
//! task = "bound"            # bound | score | oracle | missing | estimate | mc
//! seed = 1
//!
//! [law]
//! builtin = "DGP-B"         # or: file = "law.csv", or: support = [[...]] + probs = [...]
//!
//! [model]                   # optional for built-in designs
//! theta0 = [1.0, 0.5]
//! jacobian = "analytic"     # analytic | fd
//! [[model.blocks]]
//! family = "mean"           # mean | quantile
//! response = 2
//! terms = [{ param = 0 }, { coord = 1, param = 1 }]
//! link = "identity"         # identity | exp | logistic (mean only)
//! cond = [0]
//!
//! [params]
//! k_max = 17
//!
//! [output]
//! path = "report.json"
//! format = "json"           # json | csv
//! ```

use std::path::{Path, PathBuf};

use condmom_core::dgp::{self, SelectionKind};
use condmom_core::estimation::Target;
use condmom_core::missing_data::{MissingDataSpec, Variant};
use condmom_core::model::families::{Link, MeanResidual, QuantileResidual, Regressor, Term};
use condmom_core::model::{JacobianMode, MomentBlock, MomentModel, ParamPoint};
use condmom_core::probability::DiscreteLaw;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::law_io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Bound,
    Score,
    Oracle,
    Missing,
    Estimate,
    Mc,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Bound => "bound",
            Task::Score => "score",
            Task::Oracle => "oracle",
            Task::Missing => "missing",
            Task::Estimate => "estimate",
            Task::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    pub support: Option<Vec<Vec<f64>>>,
    pub probs: Option<Vec<f64>>,
    /// DGP-C selection declaration: `known` or `logistic`.
    pub selection: Option<String>,
    /// Seed of the `random` built-in design.
    pub design_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    /// Regressor coordinate; omitted for an intercept.
    pub coord: Option<usize>,
    pub param: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub family: String,
    pub response: usize,
    pub terms: Vec<TermConfig>,
    pub link: Option<String>,
    pub tau: Option<f64>,
    pub cond: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub theta0: Vec<f64>,
    pub jacobian: Option<String>,
    pub blocks: Vec<BlockConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub k_max: Option<usize>,
    pub stop_tol: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n: usize,
    pub replications: usize,
    pub m_star: usize,
    /// `indicator` or `polynomial`.
    pub instruments: String,
    pub degree: u32,
    /// Score route for task `score`: backfit, oracle, sequential or chamberlain.
    pub method: String,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            k_max: None,
            stop_tol: condmom_core::infobound::DEFAULT_STOP_TOL,
            tol: condmom_core::efficient_score::DEFAULT_TOL,
            max_iter: condmom_core::efficient_score::DEFAULT_MAX_ITER,
            n: 2000,
            replications: 100,
            m_star: condmom_core::estimation::DEFAULT_M_STAR,
            instruments: "indicator".into(),
            degree: 2,
            method: "backfit".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    pub law: LawConfig,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("config: {}", e.message().trim())))
            .and_then(|c: Self| {
                c.check_params()?;
                Ok(c)
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative law files are resolved against the config's directory
        if let (Some(f), Some(dir)) = (&cfg.law.file, path.parent()) {
            if f.is_relative() {
                cfg.law.file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    fn check_params(&self) -> Result<()> {
        let p = &self.params;
        if !(p.tol > 0.0) {
            return Err(CliError::validation("params.tol must be positive"));
        }
        if !(p.stop_tol >= 0.0) {
            return Err(CliError::validation("params.stop_tol must be nonnegative"));
        }
        if p.max_iter == 0 {
            return Err(CliError::validation("params.max_iter must be at least 1"));
        }
        if p.m_star == 0 {
            return Err(CliError::validation("params.m_star must be at least 1"));
        }
        if p.k_max == Some(0) {
            return Err(CliError::validation("params.k_max must be at least 1"));
        }
        if !["indicator", "polynomial"].contains(&p.instruments.as_str()) {
            return Err(CliError::validation(format!(
                "params.instruments: unknown instrument family `{}`",
                p.instruments
            )));
        }
        if !["backfit", "oracle", "sequential", "chamberlain"].contains(&p.method.as_str()) {
            return Err(CliError::validation(format!("params.method: unknown score method `{}`", p.method)));
        }
        match self.task {
            Task::Mc if p.replications < 2 => Err(CliError::validation(format!(
                "params.replications must be at least 2 for task mc, got {}",
                p.replications
            ))),
            Task::Mc | Task::Estimate if p.n == 0 => Err(CliError::validation("params.n must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// What a run operates on once the configuration is resolved.
pub struct Design {
    pub name: String,
    pub law: DiscreteLaw,
    pub target: Target,
}

impl Design {
    pub fn model(&self) -> &MomentModel {
        self.target.model()
    }

    pub fn missing_spec(&self) -> Option<&MissingDataSpec> {
        match &self.target {
            Target::Missing { spec, .. } => Some(spec),
            Target::Model(_) => None,
        }
    }
}

fn selection_kind(law: &LawConfig) -> Result<SelectionKind> {
    match law.selection.as_deref() {
        None | Some("known") => Ok(SelectionKind::Known),
        Some("logistic") => Ok(SelectionKind::Logistic),
        Some(other) => Err(CliError::validation(format!(
            "law.selection: unknown π family `{other}` (expected known or logistic)"
        ))),
    }
}

fn missing_variant(name: &str) -> Option<Variant> {
    match name {
        "DGP-C-response" => Some(Variant::MissingResponse),
        "DGP-C-regressor" => Some(Variant::MissingRegressor),
        _ => None,
    }
}

pub fn build_block(j: usize, b: &BlockConfig) -> Result<MomentBlock> {
    let field = |f: &str| format!("model.blocks[{j}].{f}");
    let terms: Vec<Term> = b
        .terms
        .iter()
        .map(|t| Term {
            regressor: t.coord.map_or(Regressor::Const(1.0), Regressor::Coord),
            param: t.param,
        })
        .collect();
    match b.family.as_str() {
        "mean" => {
            if b.tau.is_some() {
                return Err(CliError::validation(format!("{}: only quantile blocks take tau", field("tau"))));
            }
            let link = match b.link.as_deref() {
                None => Link::Identity,
                Some(s) => Link::parse(s)
                    .ok_or_else(|| CliError::validation(format!("{}: unknown link `{s}`", field("link"))))?,
            };
            let mut f = MeanResidual::linear(b.response, terms);
            f.link = link;
            Ok(MomentBlock::new(f, b.cond.clone()))
        }
        "quantile" => {
            if b.link.is_some() {
                return Err(CliError::validation(format!("{}: quantile blocks have no link", field("link"))));
            }
            let tau = b
                .tau
                .ok_or_else(|| CliError::validation(format!("{}: required for quantile blocks", field("tau"))))?;
            let f = QuantileResidual::new(b.response, terms, tau)
                .map_err(|e| CliError::validation(format!("{}: {e}", field("tau"))))?;
            Ok(MomentBlock::new(f, b.cond.clone()))
        }
        other => Err(CliError::validation(format!(
            "{}: unknown block family `{other}` (expected mean or quantile)",
            field("family")
        ))),
    }
}

pub fn build_model(cfg: &ModelConfig, z_dim: usize) -> Result<MomentModel> {
    if cfg.blocks.is_empty() {
        return Err(CliError::validation("model.blocks: at least one block is required"));
    }
    let mode = match cfg.jacobian.as_deref() {
        None | Some("analytic") => JacobianMode::Analytic,
        Some("fd") => JacobianMode::FiniteDifference,
        Some(other) => {
            return Err(CliError::validation(format!(
                "model.jacobian: unknown mode `{other}` (expected analytic or fd)"
            )))
        }
    };
    let blocks = cfg
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| build_block(j, b))
        .collect::<Result<Vec<_>>>()?;
    let theta0 = ParamPoint::new(cfg.theta0.clone())
        .map_err(|e| CliError::validation(format!("model.theta0: {e}")))?;
    MomentModel::new(blocks, z_dim, theta0, mode).map_err(|e| CliError::validation(format!("model: {e}")))
}

fn read_law(cfg: &LawConfig) -> Result<Option<DiscreteLaw>> {
    match (&cfg.file, &cfg.support, &cfg.probs) {
        (Some(path), None, None) => Ok(Some(law_io::read_law(path)?)),
        (None, Some(s), Some(p)) => DiscreteLaw::new(s.clone(), p.clone())
            .map(Some)
            .map_err(|e| CliError::validation(format!("law.support: {e}"))),
        (None, None, None) => Ok(None),
        (None, Some(_), None) => Err(CliError::validation("law.probs: required with law.support")),
        (None, None, Some(_)) => Err(CliError::validation("law.support: required with law.probs")),
        _ => Err(CliError::validation("law: give either a file or an inline support, not both")),
    }
}

/// Builds the law and model a run needs.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Design> {
    let explicit = read_law(&cfg.law)?;
    let (name, law, builtin_target) = match (&cfg.law.builtin, explicit) {
        (Some(_), Some(_)) => {
            return Err(CliError::validation("law: give either a builtin design or explicit data, not both"))
        }
        (Some(b), None) => {
            if let Some(v) = missing_variant(b) {
                let c = dgp::dgp_c(v, selection_kind(&cfg.law)?);
                let t = Target::missing(c.spec)?;
                (b.clone(), c.law, Some(t))
            } else if b == "random" {
                let c = dgp::random_two_block(cfg.law.design_seed.unwrap_or(0));
                (b.clone(), c.law, Some(Target::Model(c.model)))
            } else {
                let c = dgp::by_name(b).ok_or_else(|| {
                    CliError::validation(format!(
                        "law.builtin: unknown design `{b}` (see `condmom list`)"
                    ))
                })?;
                (b.clone(), c.law, Some(Target::Model(c.model)))
            }
        }
        (None, Some(law)) => ("custom".to_string(), law, None),
        (None, None) => return Err(CliError::validation("law: no builtin, file or inline support given")),
    };
    if cfg.law.selection.is_some() && missing_variant(&name).is_none() {
        return Err(CliError::validation("law.selection: only the DGP-C designs take a selection family"));
    }
    let target = match (&cfg.model, builtin_target) {
        (Some(m), t) => {
            if matches!(t, Some(Target::Missing { .. })) {
                return Err(CliError::validation("model: DGP-C designs fix their own model"));
            }
            Target::Model(build_model(m, law.dim())?)
        }
        (None, Some(t)) => t,
        (None, None) => return Err(CliError::validation("model: required for a custom law")),
    };
    target.model().check_restrictions(&law)?;
    if cfg.task == Task::Missing && !matches!(target, Target::Missing { .. }) {
        return Err(CliError::validation("task missing needs law.builtin = DGP-C-response or DGP-C-regressor"));
    }
    Ok(Design { name, law, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_builtin_config() {
        let cfg = ExperimentConfig::from_toml("task = \"bound\"\n[law]\nbuiltin = \"DGP-A\"\n").unwrap();
        assert_eq!(cfg.task, Task::Bound);
        assert_eq!(cfg.output.format, Format::Json);
        let d = resolve(&cfg).unwrap();
        assert_eq!(d.law.len(), 16);
    }

    #[test]
    fn unknown_family_names_the_field() {
        let text = r#"
task = "score"
[law]
builtin = "DGP-A"
[model]
theta0 = [0.0]
[[model.blocks]]
family = "probit"
response = 2
terms = [{ param = 0 }]
cond = [0]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let err = resolve(&cfg).err().unwrap();
        assert!(err.to_string().contains("model.blocks[0].family"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mc_needs_two_replications() {
        let text = "task = \"mc\"\n[law]\nbuiltin = \"DGP-A\"\n[params]\nreplications = 0\n";
        assert_eq!(ExperimentConfig::from_toml(text).err().unwrap().exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "task = \"bound\"\nbogus = 1\n[law]\nbuiltin = \"DGP-A\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn inline_law_with_model() {
        let text = r#"
task = "score"
[law]
support = [[0.0, -1.0], [0.0, 1.0], [1.0, -2.0], [1.0, 2.0]]
probs = [0.25, 0.25, 0.25, 0.25]
[model]
theta0 = [0.0]
[[model.blocks]]
family = "mean"
response = 1
terms = [{ param = 0 }]
cond = [0]
"#;
        let d = resolve(&ExperimentConfig::from_toml(text).unwrap()).unwrap();
        assert_eq!(d.name, "custom");
        assert_eq!(d.model().num_blocks(), 1);
    }

    #[test]
    fn violated_restriction_is_a_validation_error() {
        let text = r#"
task = "score"
[law]
support = [[0.0, 1.0], [1.0, 2.0]]
probs = [0.5, 0.5]
[model]
theta0 = [0.0]
[[model.blocks]]
family = "mean"
response = 1
terms = [{ param = 0 }]
cond = [0]
"#;
        let err = resolve(&ExperimentConfig::from_toml(text).unwrap()).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }
}
