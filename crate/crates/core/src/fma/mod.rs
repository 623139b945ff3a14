//! The FMA-PG algorithm.
//!
//! Each outer iteration freezes the current policy `π_t`, evaluates it exactly and forms
//! the surrogate `ℓ_t(θ)` (linearisation of `J` at `π_t` minus `1/η` times a state-weighted
//! Bregman divergence, weights `d^{π_t}`). The surrogate is then improved either by `m`
//! gradient steps on the parameters or, for tabular policies, in closed form.
//!
//! With the step sizes from [`step_size`] and ascent steps on `ℓ_t`, `J` never decreases;
//! [`verify`] checks the lower-bound property behind that guarantee empirically.

mod closed_form;
mod inner;
mod run;
pub mod step_size;
mod surrogate;
pub mod verify;

pub use closed_form::{closed_form_npg, closed_form_softmax_exp};
pub use inner::{inner_loop, InnerOutcome};
pub use run::{resolve_eta, run_fma_pg, IterationRecord, RunTrace};
pub use step_size::{step_size_direct, step_size_direct_capped, step_size_softmax, step_size_softmax_range};
pub use surrogate::{
    surrogate_direct, surrogate_softmax, surrogate_softmax_kl_form, surrogate_sppo, Objective,
    SurrogateContext,
};
pub use verify::{lower_bound_margins, verify_lower_bound, LowerBoundReport, TrialMargin, Witness};

use serde::{Deserialize, Serialize};

use crate::mdp::Parameterization;
use crate::mirror::MirrorKind;
use crate::{Error, Result};

/// Which sufficient statistics the mirror step acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// Action probabilities `p(a|s)`.
    Direct,
    /// Logits `z(a, s)`.
    Softmax,
}

/// Weighting of the importance ratio in the direct surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageCenter {
    #[default]
    UseQ,
    /// MDPO-style advantage weighting.
    UseA,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaMode {
    /// Improvement-guaranteeing step size for rewards in `[0, 1]`.
    Theoretical,
    Manual(f64),
}

/// Armijo backtracking for the inner gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Armijo {
    pub initial: f64,
    pub shrink: f64,
    pub sufficient_ascent: f64,
    pub max_halvings: u32,
}

impl Default for Armijo {
    fn default() -> Self {
        Self {
            initial: 1.0,
            shrink: 0.5,
            sufficient_ascent: 1e-4,
            max_halvings: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerStep {
    Fixed(f64),
    Backtracking(Armijo),
}

impl Default for InnerStep {
    fn default() -> Self {
        InnerStep::Backtracking(Armijo::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateMode {
    /// `m` gradient-ascent steps on the surrogate parameters.
    Gradient { inner_iters: usize, step: InnerStep },
    /// Exact per-state maximiser (tabular only).
    ClosedForm,
}

/// Theoretical η is capped here when the bound degenerates (γ = 0).
pub const DEFAULT_ETA_CAP: f64 = 1e3;

/// Slack on the per-iteration improvement flag.
pub const IMPROVEMENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FmaConfig {
    pub outer_iters: usize,
    pub update: UpdateMode,
    pub eta_mode: EtaMode,
    pub eta_cap: f64,
    pub representation: Representation,
    pub mirror: MirrorKind,
    pub center: AdvantageCenter,
    /// When set (softmax only), the inner loop maximises the clipped sPPO objective.
    pub clip_epsilon: Option<f64>,
    pub parameterization: Parameterization,
    /// Scale of the random initial parameters; `0` starts from the uniform policy.
    pub init_scale: f64,
    pub seed: u64,
}

impl FmaConfig {
    /// Softmax representation, exponential map, theoretical η, Armijo inner loop.
    pub fn softmax(outer_iters: usize, inner_iters: usize) -> Self {
        Self {
            outer_iters,
            update: UpdateMode::Gradient {
                inner_iters,
                step: InnerStep::default(),
            },
            eta_mode: EtaMode::Theoretical,
            eta_cap: DEFAULT_ETA_CAP,
            representation: Representation::Softmax,
            mirror: MirrorKind::NormalizedExponential,
            center: AdvantageCenter::UseQ,
            clip_epsilon: None,
            parameterization: Parameterization::Tabular,
            init_scale: 0.0,
            seed: 0,
        }
    }

    /// Direct representation, negative entropy, theoretical η, Armijo inner loop.
    pub fn direct(outer_iters: usize, inner_iters: usize) -> Self {
        Self {
            representation: Representation::Direct,
            mirror: MirrorKind::NegativeEntropy,
            ..Self::softmax(outer_iters, inner_iters)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_pair(self.representation, self.mirror)?;
        if let EtaMode::Manual(eta) = self.eta_mode {
            if !(eta > 0.0) {
                return Err(Error::Configuration(format!("manual η must be positive, got {eta}")));
            }
        }
        if !(self.eta_cap > 0.0) {
            return Err(Error::Configuration("η cap must be positive".into()));
        }
        if let Some(eps) = self.clip_epsilon {
            if !(eps > 0.0) {
                return Err(Error::Configuration(format!("clip ε must be positive, got {eps}")));
            }
            if self.representation != Representation::Softmax {
                return Err(Error::Configuration(
                    "the clipped objective applies to the softmax representation only".into(),
                ));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Configuration("init_scale must be finite and >= 0".into()));
        }
        match self.update {
            UpdateMode::Gradient { step, .. } => check_step(step),
            UpdateMode::ClosedForm => {
                if self.parameterization != Parameterization::Tabular {
                    return Err(Error::Configuration(
                        "closed-form updates need the tabular parameterization".into(),
                    ));
                }
                if self.representation == Representation::Direct
                    && self.mirror != MirrorKind::NegativeEntropy
                {
                    return Err(Error::Configuration(
                        "the direct closed form is defined for the negative entropy map".into(),
                    ));
                }
                if self.clip_epsilon.is_some() {
                    return Err(Error::Configuration(
                        "closed-form updates do not use a clip ε".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn check_step(step: InnerStep) -> Result<()> {
    match step {
        InnerStep::Fixed(alpha) if !(alpha > 0.0 && alpha.is_finite()) => Err(
            Error::Configuration(format!("fixed inner step α must be positive, got {alpha}")),
        ),
        InnerStep::Backtracking(a)
            if !(a.initial > 0.0
                && a.shrink > 0.0
                && a.shrink < 1.0
                && a.sufficient_ascent > 0.0
                && a.sufficient_ascent < 1.0) =>
        {
            Err(Error::Configuration(format!("invalid Armijo parameters {a:?}")))
        }
        _ => Ok(()),
    }
}

/// Representations pair with specific mirror maps.
pub(crate) fn check_pair(rep: Representation, mirror: MirrorKind) -> Result<()> {
    match (rep, mirror) {
        (Representation::Direct, MirrorKind::SquaredEuclidean)
        | (Representation::Direct, MirrorKind::NegativeEntropy)
        | (Representation::Softmax, MirrorKind::NormalizedExponential) => Ok(()),
        _ => Err(Error::Configuration(format!(
            "{mirror:?} mirror map is not supported with the {rep:?} representation"
        ))),
    }
}
