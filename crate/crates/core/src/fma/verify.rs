//! Empirical check that the surrogate lower-bounds the return.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Serialize;

use super::{Representation, SurrogateContext};
use crate::mdp::{evaluate_policy, softmax_rows, DirectPolicy, Table};
use crate::rng::{substream, Stream};
use crate::Result;

/// Slack allowed on every lower-bound inequality.
pub const LOWER_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMargin {
    pub trial: usize,
    pub ret: f64,
    pub surrogate: f64,
    /// `J(π) − ℓ_t(π)`; negative beyond the slack is a violation.
    pub surrogate_margin: f64,
    /// `J(π) − [J(π_t) + Σ μ_t (Q + c/(1−γ)) ln(p/p_t)]`.
    pub reward_shift_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub margin: f64,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub trials: usize,
    /// Reward shift `c = max(0, −min r)`.
    pub reward_shift: f64,
    pub surrogate_violations: Vec<Witness>,
    pub reward_shift_violations: Vec<Witness>,
    pub min_surrogate_margin: f64,
    pub min_reward_shift_margin: f64,
    pub margins: Vec<TrialMargin>,
}

impl LowerBoundReport {
    pub fn holds(&self) -> bool {
        self.surrogate_violations.is_empty() && self.reward_shift_violations.is_empty()
    }
}

/// Margins of both inequalities at one candidate policy.
pub fn lower_bound_margins(ctx: &SurrogateContext<'_>, probs: &Table) -> Result<(f64, f64, f64, f64)> {
    let policy = DirectPolicy::new(probs.clone())?;
    let ret = evaluate_policy(ctx.mdp(), &policy)?.ret;
    let surrogate = match ctx.representation() {
        Representation::Direct => ctx.direct_value(probs)?,
        Representation::Softmax => ctx.softmax_value(probs)?,
    };
    let shift_rhs = reward_shift_bound(ctx, probs);
    Ok((ret, surrogate, ret - surrogate, ret - shift_rhs))
}

fn reward_shift(ctx: &SurrogateContext<'_>) -> f64 {
    (-ctx.mdp().reward_range().0).max(0.0)
}

/// `J(π_t) + Σ_{μ_t>0} μ_t (Q_t + c/(1−γ)) ln(p/p_t)`.
fn reward_shift_bound(ctx: &SurrogateContext<'_>, probs: &Table) -> f64 {
    let eval = ctx.eval();
    let p_t = ctx.frozen().probs();
    let offset = reward_shift(ctx) / (1.0 - ctx.mdp().discount());
    let mut total = eval.ret;
    for s in 0..probs.nrows() {
        for a in 0..probs.ncols() {
            let mu = eval.mu_occ[(s, a)];
            if mu == 0.0 {
                continue;
            }
            let w = eval.q[(s, a)] + offset;
            if w == 0.0 {
                continue;
            }
            let p = probs[(s, a)];
            if p == 0.0 {
                return f64::NEG_INFINITY;
            }
            total += mu * w * (p / p_t[(s, a)]).ln();
        }
    }
    total
}

/// Sample `trials` random policies and check `ℓ_t(π) ≤ J(π)` together with the
/// reward-shift bound. Even trials draw logits uniformly in `[-3, 3]`; odd trials perturb
/// the frozen policy's log-probabilities with Gaussian noise (σ = 0.5).
pub fn verify_lower_bound(ctx: &SurrogateContext<'_>, trials: usize, seed: u64) -> Result<LowerBoundReport> {
    let (ns, na) = ctx.frozen().probs().shape();
    let mut rng = substream(seed, Stream::PolicySamples);
    let global = Uniform::new_inclusive(-3.0, 3.0).expect("valid range");
    let local = Normal::new(0.0, 0.5).expect("valid sigma");
    let base = ctx.frozen().probs().map(|p| p.max(1e-300).ln());

    let mut report = LowerBoundReport {
        trials,
        reward_shift: reward_shift(ctx),
        surrogate_violations: Vec::new(),
        reward_shift_violations: Vec::new(),
        min_surrogate_margin: f64::INFINITY,
        min_reward_shift_margin: f64::INFINITY,
        margins: Vec::with_capacity(trials),
    };

    for trial in 0..trials {
        let logits = if trial % 2 == 0 {
            DMatrix::from_fn(ns, na, |_, _| global.sample(&mut rng))
        } else {
            DMatrix::from_fn(ns, na, |s, a| base[(s, a)] + local.sample(&mut rng))
        };
        // Keep the RNG stream position independent of the branch above.
        let _: u32 = rng.random();
        let probs = softmax_rows(&logits);
        let (ret, surrogate, margin, shift_margin) = lower_bound_margins(ctx, &probs)?;
        let witness = |margin| Witness {
            trial,
            margin,
            logits: logits.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        if margin < -LOWER_BOUND_SLACK {
            report.surrogate_violations.push(witness(margin));
        }
        if shift_margin < -LOWER_BOUND_SLACK {
            report.reward_shift_violations.push(witness(shift_margin));
        }
        report.min_surrogate_margin = report.min_surrogate_margin.min(margin);
        report.min_reward_shift_margin = report.min_reward_shift_margin.min(shift_margin);
        report.margins.push(TrialMargin {
            trial,
            ret,
            surrogate,
            surrogate_margin: margin,
            reward_shift_margin: shift_margin,
        });
    }
    Ok(report)
}
