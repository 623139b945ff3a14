//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandits::{Algorithm, DEFAULT_HORIZON, ETA_GRID};
use crate::envs::CliffSpec;
use crate::fma::{
    AdvantageCenter, EtaMode, FmaConfig, InnerStep, Representation, UpdateMode, DEFAULT_ETA_CAP,
};
use crate::mdp::Parameterization;
use crate::mirror::MirrorKind;
use crate::rng::split;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id written to every result row; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    /// Master seed from which per-run seeds are split.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Bandit(BanditExperiment),
    Cliff(CliffExperiment),
    TabularRandom(TabularExperiment),
    Verify(VerifyExperiment),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Bandit,
    Cliff,
    TabularRandom,
    Verify,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Bandit => "bandit",
            ExperimentKind::Cliff => "cliff",
            ExperimentKind::TabularRandom => "tabular-random",
            ExperimentKind::Verify => "verify",
        }
    }
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Bandit(_) => ExperimentKind::Bandit,
            Experiment::Cliff(_) => ExperimentKind::Cliff,
            Experiment::TabularRandom(_) => ExperimentKind::TabularRandom,
            Experiment::Verify(_) => ExperimentKind::Verify,
        }
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Bandit => Experiment::Bandit(BanditExperiment::default()),
            ExperimentKind::Cliff => Experiment::Cliff(CliffExperiment::default()),
            ExperimentKind::TabularRandom => Experiment::TabularRandom(TabularExperiment::default()),
            ExperimentKind::Verify => Experiment::Verify(VerifyExperiment::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditExperiment {
    pub arms: Vec<usize>,
    pub gaps: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub eta_grid: Vec<f64>,
    /// Explicit environment seeds; when absent, `n_env_seeds` are split from the master seed.
    pub env_seeds: Option<Vec<u64>>,
    pub n_env_seeds: usize,
    /// Defaults to the master seed.
    pub agent_seed: Option<u64>,
    pub horizon: usize,
    /// Per-run regret is written every `record_every` rounds and at the horizon.
    pub record_every: usize,
}

impl Default for BanditExperiment {
    fn default() -> Self {
        Self {
            arms: vec![10],
            gaps: vec![0.5],
            algorithms: Algorithm::ALL.to_vec(),
            eta_grid: ETA_GRID.to_vec(),
            env_seeds: None,
            n_env_seeds: 50,
            agent_seed: None,
            horizon: DEFAULT_HORIZON,
            record_every: 100,
        }
    }
}

impl BanditExperiment {
    pub fn resolved_env_seeds(&self, master: u64) -> Vec<u64> {
        match &self.env_seeds {
            Some(seeds) => seeds.clone(),
            None => (0..self.n_env_seeds as u64).map(|i| split(master, i)).collect(),
        }
    }

    pub fn resolved_agent_seed(&self, master: u64) -> u64 {
        self.agent_seed.unwrap_or(master)
    }
}

/// How the surrogate is maximised in each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UpdateSpec {
    ClosedForm,
    Gradient {
        inner_iters: usize,
        #[serde(default)]
        step: InnerStep,
    },
}

impl From<UpdateSpec> for UpdateMode {
    fn from(spec: UpdateSpec) -> Self {
        match spec {
            UpdateSpec::ClosedForm => UpdateMode::ClosedForm,
            UpdateSpec::Gradient { inner_iters, step } => UpdateMode::Gradient { inner_iters, step },
        }
    }
}

/// One FMA-PG variant, run once per step size in `etas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: String,
    pub representation: Representation,
    pub mirror: MirrorKind,
    #[serde(default)]
    pub center: AdvantageCenter,
    pub update: UpdateSpec,
    /// Manual step sizes; absent means the theoretical step size.
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    #[serde(default)]
    pub clip_epsilon: Option<f64>,
    #[serde(default = "default_eta_cap")]
    pub eta_cap: f64,
}

fn default_eta_cap() -> f64 {
    DEFAULT_ETA_CAP
}

impl AlgorithmSpec {
    /// The step-size cells of this algorithm.
    pub fn eta_modes(&self) -> Vec<EtaMode> {
        match &self.etas {
            Some(etas) => etas.iter().map(|&e| EtaMode::Manual(e)).collect(),
            None => vec![EtaMode::Theoretical],
        }
    }

    pub fn inner_iters(&self) -> Option<usize> {
        match self.update {
            UpdateSpec::Gradient { inner_iters, .. } => Some(inner_iters),
            UpdateSpec::ClosedForm => None,
        }
    }

    pub fn fma_config(&self, outer_iters: usize, eta_mode: EtaMode, seed: u64) -> FmaConfig {
        FmaConfig {
            outer_iters,
            update: self.update.into(),
            eta_mode,
            eta_cap: self.eta_cap,
            representation: self.representation,
            mirror: self.mirror,
            center: self.center,
            clip_epsilon: self.clip_epsilon,
            parameterization: Parameterization::Tabular,
            init_scale: 0.0,
            seed,
        }
    }

    /// MDPO: direct representation, negative entropy, advantage weighting, exact update.
    pub fn mdpo(etas: Vec<f64>) -> Self {
        Self {
            name: "mdpo".into(),
            representation: Representation::Direct,
            mirror: MirrorKind::NegativeEntropy,
            center: AdvantageCenter::UseA,
            update: UpdateSpec::ClosedForm,
            etas: Some(etas),
            clip_epsilon: None,
            eta_cap: DEFAULT_ETA_CAP,
        }
    }

    /// Softmax representation with the exponential map and its exact update.
    pub fn sppo(etas: Vec<f64>) -> Self {
        Self {
            name: "sppo".into(),
            representation: Representation::Softmax,
            mirror: MirrorKind::NormalizedExponential,
            center: AdvantageCenter::UseQ,
            update: UpdateSpec::ClosedForm,
            etas: Some(etas),
            clip_epsilon: None,
            eta_cap: DEFAULT_ETA_CAP,
        }
    }

    /// Softmax FMA-PG with the theoretical step size and `m` Armijo steps.
    pub fn softmax_gradient(m: usize) -> Self {
        Self {
            name: format!("softmax-m{m}"),
            update: UpdateSpec::Gradient { inner_iters: m, step: InnerStep::default() },
            etas: None,
            ..Self::sppo(Vec::new())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliffExperiment {
    pub spec: CliffSpec,
    pub outer_iters: usize,
    /// A run has converged once `J` is within this distance of the optimum.
    pub tolerance: f64,
    pub algorithms: Vec<AlgorithmSpec>,
}

impl Default for CliffExperiment {
    fn default() -> Self {
        Self {
            spec: CliffSpec::default(),
            outer_iters: 1000,
            tolerance: 1e-3,
            algorithms: vec![
                AlgorithmSpec::mdpo(vec![0.03, 0.1, 0.3, 1.0, 3.0, 10.0]),
                AlgorithmSpec::sppo(vec![0.03, 1.0]),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularExperiment {
    pub instances: usize,
    /// Inclusive bounds on the number of states.
    pub states: (usize, usize),
    pub actions: (usize, usize),
    pub discount: f64,
    pub reward_range: (f64, f64),
    pub outer_iters: usize,
    pub tolerance: f64,
    pub algorithms: Vec<AlgorithmSpec>,
}

impl Default for TabularExperiment {
    fn default() -> Self {
        Self {
            instances: 100,
            states: (2, 6),
            actions: (2, 4),
            discount: 0.9,
            reward_range: (0.0, 1.0),
            outer_iters: 50,
            tolerance: 1e-3,
            algorithms: vec![AlgorithmSpec::softmax_gradient(1), AlgorithmSpec::softmax_gradient(10)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyExperiment {
    /// Random MDPs per check.
    pub instances: usize,
    /// Random policies per MDP in the lower-bound checks.
    pub trials: usize,
    /// Step-size inflation for the negative control.
    pub negative_control_factor: f64,
}

impl Default for VerifyExperiment {
    fn default() -> Self {
        Self {
            instances: 20,
            trials: 20,
            negative_control_factor: 100.0,
        }
    }
}

impl ExperimentConfig {
    pub fn with_defaults(kind: ExperimentKind) -> Self {
        Self {
            name: None,
            seed: 0,
            output: OutputConfig::default(),
            experiment: Experiment::default_for(kind),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn experiment_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.experiment.kind().name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(name) = &self.name {
            if name.is_empty() {
                return Err(Error::validation("name", "must be non-empty"));
            }
        }
        match &self.experiment {
            Experiment::Bandit(b) => validate_bandit(b),
            Experiment::Cliff(c) => validate_cliff(c),
            Experiment::TabularRandom(t) => validate_tabular(t),
            Experiment::Verify(v) => {
                if v.instances == 0 {
                    return Err(Error::validation("experiment.instances", "must be at least 1"));
                }
                if v.trials == 0 {
                    return Err(Error::validation("experiment.trials", "must be at least 1"));
                }
                if !(v.negative_control_factor > 1.0) {
                    return Err(Error::validation(
                        "experiment.negative_control_factor",
                        "must exceed 1",
                    ));
                }
                Ok(())
            }
        }
    }
}

fn non_empty<T>(items: &[T], path: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::validation(path, "must be non-empty"));
    }
    Ok(())
}

fn positive_finite(values: &[f64], path: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::validation(format!("{path}[{i}]"), format!("must be positive, got {v}")));
        }
    }
    Ok(())
}

fn validate_bandit(b: &BanditExperiment) -> Result<()> {
    non_empty(&b.arms, "experiment.arms")?;
    if let Some(i) = b.arms.iter().position(|&k| k == 0) {
        return Err(Error::validation(format!("experiment.arms[{i}]"), "must be at least 1"));
    }
    non_empty(&b.gaps, "experiment.gaps")?;
    if let Some(i) = b.gaps.iter().position(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::validation(format!("experiment.gaps[{i}]"), "must lie in [0, 1]"));
    }
    non_empty(&b.algorithms, "experiment.algorithms")?;
    non_empty(&b.eta_grid, "experiment.eta_grid")?;
    positive_finite(&b.eta_grid, "experiment.eta_grid")?;
    match &b.env_seeds {
        Some(seeds) => non_empty(seeds, "experiment.env_seeds")?,
        None if b.n_env_seeds == 0 => {
            return Err(Error::validation("experiment.n_env_seeds", "must be at least 1"))
        }
        None => {}
    }
    if b.horizon == 0 {
        return Err(Error::validation("experiment.horizon", "must be at least 1"));
    }
    if b.record_every == 0 {
        return Err(Error::validation("experiment.record_every", "must be at least 1"));
    }
    Ok(())
}

fn validate_algorithms(algs: &[AlgorithmSpec], theoretical_allowed: bool) -> Result<()> {
    non_empty(algs, "experiment.algorithms")?;
    for (i, alg) in algs.iter().enumerate() {
        let path = format!("experiment.algorithms[{i}]");
        if alg.name.is_empty() {
            return Err(Error::validation(format!("{path}.name"), "must be non-empty"));
        }
        if algs[..i].iter().any(|a| a.name == alg.name) {
            return Err(Error::validation(format!("{path}.name"), format!("duplicate name {:?}", alg.name)));
        }
        match &alg.etas {
            Some(etas) => {
                non_empty(etas, &format!("{path}.etas"))?;
                positive_finite(etas, &format!("{path}.etas"))?;
            }
            None if !theoretical_allowed => {
                return Err(Error::validation(
                    format!("{path}.etas"),
                    "rewards are outside [0, 1], so manual step sizes are required",
                ))
            }
            None => {}
        }
        for mode in alg.eta_modes() {
            alg.fma_config(1, mode, 0)
                .validate()
                .map_err(|e| Error::validation(path.clone(), e.to_string()))?;
        }
    }
    Ok(())
}

fn validate_cliff(c: &CliffExperiment) -> Result<()> {
    c.spec
        .validate()
        .map_err(|e| Error::validation("experiment.spec", e.to_string()))?;
    if !(c.spec.discount >= 0.0 && c.spec.discount < 1.0) {
        return Err(Error::validation("experiment.spec.discount", "must lie in [0, 1)"));
    }
    if !(c.tolerance > 0.0) {
        return Err(Error::validation("experiment.tolerance", "must be positive"));
    }
    let rewards_in_unit = [c.spec.cliff_penalty, c.spec.step_reward, c.spec.goal_reward]
        .iter()
        .all(|r| (0.0..=1.0).contains(r));
    validate_algorithms(&c.algorithms, rewards_in_unit)
}

fn validate_tabular(t: &TabularExperiment) -> Result<()> {
    if t.instances == 0 {
        return Err(Error::validation("experiment.instances", "must be at least 1"));
    }
    for (name, (lo, hi)) in [("states", t.states), ("actions", t.actions)] {
        if lo == 0 || lo > hi {
            return Err(Error::validation(format!("experiment.{name}"), "needs 1 <= min <= max"));
        }
    }
    if !(t.discount >= 0.0 && t.discount < 1.0) {
        return Err(Error::validation("experiment.discount", "must lie in [0, 1)"));
    }
    let (lo, hi) = t.reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::validation("experiment.reward_range", "needs finite min <= max"));
    }
    if !(t.tolerance > 0.0) {
        return Err(Error::validation("experiment.tolerance", "must be positive"));
    }
    validate_algorithms(&t.algorithms, lo >= 0.0 && hi <= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in [
            ExperimentKind::Bandit,
            ExperimentKind::Cliff,
            ExperimentKind::TabularRandom,
            ExperimentKind::Verify,
        ] {
            ExperimentConfig::with_defaults(kind).validate().unwrap();
        }
    }

    #[test]
    fn empty_seed_list_names_the_field() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment": {"kind": "bandit", "env_seeds": []}}"#,
        )
        .unwrap_err();
        match err {
            Error::Validation { path, .. } => assert_eq!(path, "experiment.env_seeds"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment": {"kind": "cliff", "spec": {"widht": 5}}}"#,
        )
        .unwrap_err();
        match err {
            Error::Validation { path, message } => {
                assert!(path.starts_with("experiment"), "{path}");
                assert!(message.contains("widht"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cliff_requires_manual_eta() {
        let err = ExperimentConfig::from_json(
            r#"{"experiment": {"kind": "cliff", "algorithms": [
                {"name": "x", "representation": "softmax", "mirror": "normalized-exponential",
                 "update": {"mode": "closed-form"}}]}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation { ref path, .. } if path == "experiment.algorithms[0].etas"));
    }

    #[test]
    fn round_trips_through_json() {
        let config = ExperimentConfig::with_defaults(ExperimentKind::Cliff);
        let text = serde_json::to_string(&config).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), config);
    }
}
