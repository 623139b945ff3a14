//! Surrogate objectives `ℓ_t` and their parameter gradients.

use nalgebra::DVector;

use super::{check_pair, AdvantageCenter, Representation};
use crate::mdp::{
    evaluate_policy, softmax_rows, DirectPolicy, EvaluationBundle, Parameterization,
    SoftmaxPolicy, Table, TabularMdp,
};
use crate::mirror::{kl_divergence, MirrorKind};
use crate::{Error, Result};

/// Frozen quantities of one outer iteration.
///
/// The divergence weights are the occupancies `d^{π_t}` of the frozen policy. States with
/// zero occupancy carry no weight and drop out of every sum.
#[derive(Debug, Clone)]
pub struct SurrogateContext<'a> {
    mdp: &'a TabularMdp,
    frozen: DirectPolicy,
    eval: EvaluationBundle,
    eta: f64,
    representation: Representation,
    mirror: MirrorKind,
    center: AdvantageCenter,
}

/// Which surrogate a parameter vector is scored with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Direct,
    Softmax,
    /// Clipped log-ratio objective with band `[1/(1+ε), 1+ε]`.
    Sppo(f64),
}

impl<'a> SurrogateContext<'a> {
    /// `eta` may be `+inf`, which switches the divergence term off.
    pub fn new(
        mdp: &'a TabularMdp,
        frozen: DirectPolicy,
        eta: f64,
        representation: Representation,
        mirror: MirrorKind,
        center: AdvantageCenter,
    ) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Configuration(format!("η must be positive, got {eta}")));
        }
        check_pair(representation, mirror)?;
        let eval = evaluate_policy(mdp, &frozen)?;
        Ok(Self {
            mdp,
            frozen,
            eval,
            eta,
            representation,
            mirror,
            center,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn frozen(&self) -> &DirectPolicy {
        &self.frozen
    }

    pub fn eval(&self) -> &EvaluationBundle {
        &self.eval
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.eval.d_occ
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn mirror(&self) -> MirrorKind {
        self.mirror
    }

    pub fn center(&self) -> AdvantageCenter {
        self.center
    }

    fn inv_eta(&self) -> f64 {
        1.0 / self.eta
    }

    /// The default objective for this context's representation.
    pub fn objective(&self, clip_epsilon: Option<f64>) -> Objective {
        match (self.representation, clip_epsilon) {
            (Representation::Direct, _) => Objective::Direct,
            (Representation::Softmax, None) => Objective::Softmax,
            (Representation::Softmax, Some(eps)) => Objective::Sppo(eps),
        }
    }

    fn weight_table(&self) -> &Table {
        match self.center {
            AdvantageCenter::UseQ => &self.eval.q,
            AdvantageCenter::UseA => &self.eval.adv,
        }
    }

    fn check_shape(&self, probs: &Table) -> Result<()> {
        if probs.shape() != self.frozen.probs().shape() {
            return Err(Error::invalid(format!(
                "policy shape {:?} does not match the frozen policy {:?}",
                probs.shape(),
                self.frozen.probs().shape()
            )));
        }
        Ok(())
    }

    fn check_ratios_defined(&self) -> Result<()> {
        let p_t = self.frozen.probs();
        for s in 0..p_t.nrows() {
            if self.eval.d_occ[s] > 0.0 {
                if let Some(a) = (0..p_t.ncols()).find(|&a| p_t[(s, a)] == 0.0) {
                    return Err(Error::invalid(format!(
                        "frozen policy has p(a={a} | s={s}) = 0; the importance ratio is undefined"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Direct surrogate on a probability table.
    pub(crate) fn direct_value(&self, probs: &Table) -> Result<f64> {
        self.check_shape(probs)?;
        self.check_ratios_defined()?;
        let p_t = self.frozen.probs();
        let c = self.weight_table();
        let mut linear = 0.0;
        let mut divergence = 0.0;
        for s in 0..probs.nrows() {
            let d = self.eval.d_occ[s];
            if d == 0.0 {
                continue;
            }
            // μ C (p/p_t − 1) = d C (p − p_t)
            linear += d * (0..probs.ncols())
                .map(|a| c[(s, a)] * (probs[(s, a)] - p_t[(s, a)]))
                .sum::<f64>();
            if self.eta.is_finite() {
                let x: Vec<f64> = probs.row(s).iter().copied().collect();
                let y: Vec<f64> = p_t.row(s).iter().copied().collect();
                let div = match self.mirror {
                    MirrorKind::NegativeEntropy => kl_divergence(&x, &y),
                    _ => 0.5 * x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                };
                divergence += d * div;
            }
        }
        let penalty = if self.eta.is_finite() {
            self.inv_eta() * divergence
        } else {
            0.0
        };
        Ok(self.eval.ret + linear - penalty)
    }

    /// `∂ℓ/∂p` for the direct surrogate.
    pub(crate) fn direct_grad_probs(&self, probs: &Table) -> Result<Table> {
        self.check_shape(probs)?;
        self.check_ratios_defined()?;
        let p_t = self.frozen.probs();
        let c = self.weight_table();
        let inv_eta = if self.eta.is_finite() { self.inv_eta() } else { 0.0 };
        Ok(Table::from_fn(probs.nrows(), probs.ncols(), |s, a| {
            let d = self.eval.d_occ[s];
            if d == 0.0 {
                return 0.0;
            }
            let (p, q) = (probs[(s, a)], p_t[(s, a)]);
            let div_grad = match self.mirror {
                MirrorKind::NegativeEntropy => {
                    if p == 0.0 {
                        // The chain rule through the softmax multiplies by p; the limit is 0.
                        0.0
                    } else {
                        (p / q).ln()
                    }
                }
                _ => p - q,
            };
            d * (c[(s, a)] - inv_eta * div_grad)
        }))
    }

    /// `Σ_{μ>0} μ w ln(p/p_t)` summed with coefficient table `coef(s, a)`; `-inf` when the
    /// candidate drops support the frozen policy uses.
    fn log_ratio_sum(&self, probs: &Table, coef: impl Fn(usize, usize) -> f64) -> f64 {
        let p_t = self.frozen.probs();
        let mut total = 0.0;
        for s in 0..probs.nrows() {
            for a in 0..probs.ncols() {
                let mu = self.eval.mu_occ[(s, a)];
                if mu == 0.0 {
                    continue;
                }
                let w = coef(s, a);
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

    pub(crate) fn softmax_value(&self, probs: &Table) -> Result<f64> {
        self.check_shape(probs)?;
        let inv_eta = if self.eta.is_finite() { self.inv_eta() } else { 0.0 };
        let adv = &self.eval.adv;
        let sum = self.log_ratio_sum(probs, |s, a| adv[(s, a)] + inv_eta);
        Ok(self.eval.ret + sum)
    }

    pub(crate) fn softmax_value_kl_form(&self, probs: &Table) -> Result<f64> {
        self.check_shape(probs)?;
        let adv = &self.eval.adv;
        let linear = self.log_ratio_sum(probs, |s, a| adv[(s, a)]);
        if !self.eta.is_finite() {
            return Ok(self.eval.ret + linear);
        }
        let p_t = self.frozen.probs();
        let mut kl = 0.0;
        for s in 0..probs.nrows() {
            let d = self.eval.d_occ[s];
            if d == 0.0 {
                continue;
            }
            let x: Vec<f64> = p_t.row(s).iter().copied().collect();
            let y: Vec<f64> = probs.row(s).iter().copied().collect();
            kl += d * kl_divergence(&x, &y);
        }
        Ok(self.eval.ret + linear - self.inv_eta() * kl)
    }

    pub(crate) fn sppo_value(&self, probs: &Table, epsilon: f64) -> Result<f64> {
        self.check_shape(probs)?;
        if !(epsilon > 0.0) {
            return Err(Error::Configuration(format!("clip ε must be positive, got {epsilon}")));
        }
        let (lo, hi) = (1.0 / (1.0 + epsilon), 1.0 + epsilon);
        let p_t = self.frozen.probs();
        let mut total = 0.0;
        for s in 0..probs.nrows() {
            for a in 0..probs.ncols() {
                let mu = self.eval.mu_occ[(s, a)];
                if mu == 0.0 {
                    continue;
                }
                let ratio = probs[(s, a)] / p_t[(s, a)];
                total += mu * self.eval.adv[(s, a)] * ratio.clamp(lo, hi).ln();
            }
        }
        Ok(total)
    }

    /// Gradient with respect to the logits of `Σ_a w(s,a) ln p(a|s)`, restricted to
    /// entries selected by `active`.
    fn log_prob_grad(
        &self,
        probs: &Table,
        weight: impl Fn(usize, usize) -> f64,
        active: impl Fn(usize, usize) -> bool,
    ) -> Table {
        let (ns, na) = probs.shape();
        let mut grad = Table::zeros(ns, na);
        for s in 0..ns {
            let mut total_w = 0.0;
            for a in 0..na {
                if self.eval.mu_occ[(s, a)] > 0.0 && active(s, a) {
                    let w = weight(s, a);
                    grad[(s, a)] += w;
                    total_w += w;
                }
            }
            for a in 0..na {
                grad[(s, a)] -= probs[(s, a)] * total_w;
            }
        }
        grad
    }

    /// Surrogate value for a probability table.
    pub fn value(&self, objective: Objective, probs: &Table) -> Result<f64> {
        match objective {
            Objective::Direct => self.direct_value(probs),
            Objective::Softmax => self.softmax_value(probs),
            Objective::Sppo(eps) => self.sppo_value(probs, eps),
        }
    }

    /// Surrogate gradient with respect to the logits.
    pub fn grad_logits(&self, objective: Objective, probs: &Table) -> Result<Table> {
        self.check_shape(probs)?;
        let adv = &self.eval.adv;
        let mu = &self.eval.mu_occ;
        match objective {
            Objective::Direct => {
                let g = self.direct_grad_probs(probs)?;
                let (ns, na) = probs.shape();
                let mut out = Table::zeros(ns, na);
                for s in 0..ns {
                    let mean: f64 = (0..na).map(|b| probs[(s, b)] * g[(s, b)]).sum();
                    for a in 0..na {
                        out[(s, a)] = probs[(s, a)] * (g[(s, a)] - mean);
                    }
                }
                Ok(out)
            }
            Objective::Softmax => {
                let inv_eta = if self.eta.is_finite() { self.inv_eta() } else { 0.0 };
                Ok(self.log_prob_grad(probs, |s, a| mu[(s, a)] * (adv[(s, a)] + inv_eta), |_, _| true))
            }
            Objective::Sppo(eps) => {
                let (lo, hi) = (1.0 / (1.0 + eps), 1.0 + eps);
                let p_t = self.frozen.probs();
                Ok(self.log_prob_grad(
                    probs,
                    |s, a| mu[(s, a)] * adv[(s, a)],
                    |s, a| {
                        let ratio = probs[(s, a)] / p_t[(s, a)];
                        ratio > lo && ratio < hi
                    },
                ))
            }
        }
    }

    /// Surrogate value at parameters `theta`.
    pub fn value_at(&self, objective: Objective, param: &Parameterization, theta: &DVector<f64>) -> Result<f64> {
        let probs = self.probs_at(param, theta)?;
        self.value(objective, &probs)
    }

    /// Surrogate gradient with respect to `theta`.
    pub fn grad_at(
        &self,
        objective: Objective,
        param: &Parameterization,
        theta: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let probs = self.probs_at(param, theta)?;
        Ok(param.pullback(&self.grad_logits(objective, &probs)?))
    }

    pub fn probs_at(&self, param: &Parameterization, theta: &DVector<f64>) -> Result<Table> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        if theta.len() != param.dim(ns, na) {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, expected {}",
                theta.len(),
                param.dim(ns, na)
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite parameters".into()));
        }
        Ok(softmax_rows(&param.logits(ns, na, theta)))
    }
}

/// Direct surrogate:
/// `J(π_t) + Σ μ_t C (p/p_t − 1) − (1/η) Σ_s d_t(s) D_φ(p(·|s), p_t(·|s))`
/// with `C = Q` or `C = A` per the context's advantage centre.
pub fn surrogate_direct(ctx: &SurrogateContext<'_>, policy: &DirectPolicy) -> Result<f64> {
    if ctx.representation != Representation::Direct {
        return Err(Error::Configuration("surrogate_direct needs a direct context".into()));
    }
    ctx.direct_value(policy.probs())
}

/// Softmax surrogate `J(π_t) + Σ μ_t (A + 1/η) ln(p/p_t)`; `-inf` if the candidate drops
/// an action the frozen policy plays.
pub fn surrogate_softmax(ctx: &SurrogateContext<'_>, policy: &SoftmaxPolicy) -> Result<f64> {
    if ctx.representation != Representation::Softmax {
        return Err(Error::Configuration("surrogate_softmax needs a softmax context".into()));
    }
    ctx.softmax_value(&policy.probs())
}

/// The same surrogate written as `J(π_t) + Σ μ_t A ln(p/p_t) − (1/η) Σ_s d_t(s) KL(p_t ‖ p)`.
pub fn surrogate_softmax_kl_form(ctx: &SurrogateContext<'_>, policy: &SoftmaxPolicy) -> Result<f64> {
    if ctx.representation != Representation::Softmax {
        return Err(Error::Configuration("surrogate_softmax needs a softmax context".into()));
    }
    ctx.softmax_value_kl_form(&policy.probs())
}

/// Clipped objective `Σ μ_t A ln clip(p/p_t, 1/(1+ε), 1+ε)`.
pub fn surrogate_sppo(ctx: &SurrogateContext<'_>, policy: &SoftmaxPolicy, epsilon: f64) -> Result<f64> {
    ctx.sppo_value(&policy.probs(), epsilon)
}
