//! The outer FMA-PG loop.

use nalgebra::DVector;
use rand_distr::{Distribution, Uniform};
use serde::Serialize;

use super::{
    closed_form_npg, closed_form_softmax_exp, inner_loop, step_size_direct_capped,
    step_size_softmax, EtaMode, FmaConfig, Representation, SurrogateContext, UpdateMode,
    IMPROVEMENT_SLACK,
};
use crate::mdp::{evaluate_policy, softmax_rows, DirectPolicy, TabularMdp};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Diagnostics for one outer iteration `t → t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `J(π_t)`.
    pub ret: f64,
    /// `ℓ_t(θ_t)`, equal to `J(π_t)` for the anchored surrogates.
    pub surrogate_before: f64,
    /// `ℓ_t(θ_{t+1})`; absent when the surrogate is undefined at the new policy.
    pub surrogate_after: Option<f64>,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub backtracks: u32,
    pub inner_steps: usize,
    /// `J(π_{t+1}) ≥ J(π_t) − 1e-10`.
    pub improved: bool,
    pub max_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// `J(π_0), …, J(π_T)`.
    pub returns: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub eta: f64,
    pub final_policy: DirectPolicy,
    /// Final parameters for gradient-mode runs.
    pub theta: Option<DVector<f64>>,
}

impl RunTrace {
    pub fn monotone(&self) -> bool {
        self.iterations.iter().all(|r| r.improved)
    }

    pub fn final_return(&self) -> f64 {
        *self.returns.last().expect("trace always holds J(π_0)")
    }
}

/// Resolve the functional step size for a run.
pub fn resolve_eta(mdp: &TabularMdp, config: &FmaConfig) -> Result<f64> {
    match config.eta_mode {
        EtaMode::Manual(eta) => Ok(eta),
        EtaMode::Theoretical => {
            let (lo, hi) = mdp.reward_range();
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::RewardRange { min: lo, max: hi });
            }
            match config.representation {
                Representation::Direct => {
                    step_size_direct_capped(mdp.discount(), mdp.n_actions(), config.eta_cap)
                }
                Representation::Softmax => Ok(step_size_softmax(mdp.discount())?.min(config.eta_cap)),
            }
        }
    }
}

/// Run `T` outer iterations from the uniform policy (or random parameters when
/// `init_scale > 0`).
pub fn run_fma_pg(mdp: &TabularMdp, config: &FmaConfig) -> Result<RunTrace> {
    config.validate()?;
    let eta = resolve_eta(mdp, config)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let param = &config.parameterization;

    let mut theta = initial_theta(config, param.dim(ns, na));
    let mut policy = DirectPolicy::new(softmax_rows(&param.logits(ns, na, &theta)))?;
    let mut ret = evaluate_policy(mdp, &policy)?.ret;

    let mut returns = Vec::with_capacity(config.outer_iters + 1);
    returns.push(ret);
    let mut iterations = Vec::with_capacity(config.outer_iters);

    for t in 0..config.outer_iters {
        let ctx = SurrogateContext::new(
            mdp,
            policy.clone(),
            eta,
            config.representation,
            config.mirror,
            config.center,
        )?;
        let objective = ctx.objective(config.clip_epsilon);

        let (next_policy, before, after, alpha, backtracks, inner_steps) = match config.update {
            UpdateMode::Gradient { inner_iters, step } => {
                let out = inner_loop(&ctx, objective, param, &theta, inner_iters, step)?;
                theta = out.theta.clone();
                let next = DirectPolicy::new(softmax_rows(&param.logits(ns, na, &theta)))?;
                (next, out.value_before, Some(out.value_after), out.last_alpha, out.backtracks, out.steps)
            }
            UpdateMode::ClosedForm => {
                let next = match config.representation {
                    Representation::Direct => closed_form_npg(&ctx)?,
                    Representation::Softmax => closed_form_softmax_exp(&ctx)?,
                };
                let after = match config.representation {
                    Representation::Direct => ctx.direct_value(next.probs()).ok(),
                    Representation::Softmax => {
                        ctx.value(objective, next.probs()).ok().filter(|v| v.is_finite())
                    }
                };
                (next, ret, after, None, 0, 1)
            }
        };

        let next_ret = evaluate_policy(mdp, &next_policy)?.ret;
        if !next_ret.is_finite() {
            return Err(Error::Numerical(format!("J(π_{}) is not finite", t + 1)));
        }
        iterations.push(IterationRecord {
            t,
            ret,
            surrogate_before: before,
            surrogate_after: after,
            eta,
            alpha,
            backtracks,
            inner_steps,
            improved: next_ret >= ret - IMPROVEMENT_SLACK,
            max_prob: next_policy.max_prob_per_state(),
        });
        policy = next_policy;
        ret = next_ret;
        returns.push(ret);
    }

    let theta = matches!(config.update, UpdateMode::Gradient { .. }).then_some(theta);
    Ok(RunTrace {
        returns,
        iterations,
        eta,
        final_policy: policy,
        theta,
    })
}

fn initial_theta(config: &FmaConfig, dim: usize) -> DVector<f64> {
    if config.init_scale == 0.0 {
        return DVector::zeros(dim);
    }
    let mut rng = substream(config.seed, Stream::PolicySamples);
    let dist = Uniform::new_inclusive(-config.init_scale, config.init_scale)
        .expect("init_scale validated finite and positive");
    DVector::from_fn(dim, |_, _| dist.sample(&mut rng))
}
