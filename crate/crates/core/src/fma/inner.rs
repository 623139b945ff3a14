//! Inner gradient ascent on the surrogate parameters.

use nalgebra::DVector;

use super::{Armijo, InnerStep, Objective, SurrogateContext};
use crate::mdp::Parameterization;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerOutcome {
    pub theta: DVector<f64>,
    pub value_before: f64,
    pub value_after: f64,
    /// Accepted ascent steps; fewer than `m` when a stationary point is reached.
    pub steps: usize,
    /// Total step-size halvings across all steps.
    pub backtracks: u32,
    /// Step size of the last accepted step.
    pub last_alpha: Option<f64>,
}

/// Run `m` ascent steps `ω ← ω + α ∇ℓ(ω)` from `theta0`.
///
/// With backtracking every accepted step satisfies the Armijo condition
/// `ℓ(ω + αg) ≥ ℓ(ω) + c α ‖g‖²`; when no step length qualifies the loop stops early and
/// keeps the current iterate. A fixed α that decreases `ℓ` is a step-size error.
pub fn inner_loop(
    ctx: &SurrogateContext<'_>,
    objective: Objective,
    param: &Parameterization,
    theta0: &DVector<f64>,
    m: usize,
    step: InnerStep,
) -> Result<InnerOutcome> {
    let mut theta = theta0.clone();
    let mut value = finite(ctx.value_at(objective, param, &theta)?, "surrogate")?;
    let value_before = value;
    let mut steps = 0;
    let mut backtracks = 0;
    let mut last_alpha = None;

    for _ in 0..m {
        let grad = ctx.grad_at(objective, param, &theta)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite surrogate gradient".into()));
        }
        let sq_norm = grad.norm_squared();
        let full_step = match step {
            InnerStep::Fixed(alpha) => alpha,
            InnerStep::Backtracking(a) => a.initial,
        };
        // Stationary up to rounding: a full step cannot gain more than the value resolves.
        if full_step * sq_norm <= 4.0 * f64::EPSILON * value.abs().max(1.0) {
            break;
        }
        match step {
            InnerStep::Fixed(alpha) => {
                let candidate = &theta + &grad * alpha;
                let next = finite(ctx.value_at(objective, param, &candidate)?, "surrogate")?;
                if next < value - 1e-12 * value.abs().max(1.0) {
                    return Err(Error::StepSize(format!(
                        "fixed inner step α = {alpha} decreased the surrogate from {value} to {next}"
                    )));
                }
                theta = candidate;
                value = next;
                last_alpha = Some(alpha);
                steps += 1;
            }
            InnerStep::Backtracking(armijo) => {
                match armijo_step(ctx, objective, param, &theta, value, &grad, sq_norm, armijo)? {
                    Some((candidate, next, alpha, halvings)) => {
                        theta = candidate;
                        value = next;
                        last_alpha = Some(alpha);
                        backtracks += halvings;
                        steps += 1;
                    }
                    None => {
                        backtracks += armijo.max_halvings;
                        break;
                    }
                }
            }
        }
    }

    Ok(InnerOutcome {
        theta,
        value_before,
        value_after: value,
        steps,
        backtracks,
        last_alpha,
    })
}

#[allow(clippy::too_many_arguments)]
fn armijo_step(
    ctx: &SurrogateContext<'_>,
    objective: Objective,
    param: &Parameterization,
    theta: &DVector<f64>,
    value: f64,
    grad: &DVector<f64>,
    sq_norm: f64,
    armijo: Armijo,
) -> Result<Option<(DVector<f64>, f64, f64, u32)>> {
    let mut alpha = armijo.initial;
    for halvings in 0..=armijo.max_halvings {
        let candidate = theta + grad * alpha;
        // -inf (support dropped) or NaN simply fails the test.
        let next = ctx.value_at(objective, param, &candidate)?;
        if next.is_finite() && next >= value + armijo.sufficient_ascent * alpha * sq_norm {
            return Ok(Some((candidate, next, alpha, halvings)));
        }
        alpha *= armijo.shrink;
    }
    Ok(None)
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numerical(format!("{what} value is not finite ({x})")))
    }
}
