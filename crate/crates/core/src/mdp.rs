//! Exact finite-MDP machinery.
//!
//! Policies come in two functional representations: a row-stochastic probability table
//! ([`DirectPolicy`]) and a logits table ([`SoftmaxPolicy`]), the latter optionally produced
//! by a [`LinearFeatures`] map. Evaluation is an exact dense LU solve.
//!
//! Occupancies are unnormalised: `d(s) = Σ_t γ^t P(s_t = s)` sums to `1 / (1 - γ)` and
//! includes the initial state at weight one.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result, SIMPLEX_TOL};

/// A `(|S|, |A|)` table indexed `[(s, a)]`.
pub type Table = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat `(s, a, s')` tensor, `s'` fastest.
    transitions: Vec<f64>,
    rewards: Table,
    initial: DVector<f64>,
    discount: f64,
}

impl TabularMdp {
    /// `transitions` is laid out as `[(s * n_actions + a) * n_states + s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Table,
        initial: DVector<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                n_states * n_actions * n_states
            )));
        }
        if rewards.shape() != (n_states, n_actions) {
            return Err(Error::invalid(format!(
                "reward table has shape {:?}, expected ({n_states}, {n_actions})",
                rewards.shape()
            )));
        }
        if initial.len() != n_states {
            return Err(Error::invalid("initial distribution has the wrong length"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!("discount {discount} is outside [0, 1)")));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        for (row_idx, row) in transitions.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                Error::invalid(format!(
                    "transition row (s={}, a={}) {msg}",
                    row_idx / n_actions,
                    row_idx % n_actions
                ))
            })?;
        }
        check_distribution(initial.as_slice())
            .map_err(|msg| Error::invalid(format!("initial distribution {msg}")))?;

        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            initial,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn rewards(&self) -> &Table {
        &self.rewards
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    /// Next-state distribution `P(· | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward_range(&self) -> (f64, f64) {
        self.rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)))
    }

    /// One-step lookahead `Q(s, a) = r(s, a) + γ Σ_s' P(s'|s, a) V(s')`.
    pub fn lookahead(&self, values: &DVector<f64>) -> Table {
        Table::from_fn(self.n_states, self.n_actions, |s, a| {
            let next: f64 = self
                .next_dist(s, a)
                .iter()
                .zip(values.iter())
                .map(|(p, v)| p * v)
                .sum();
            self.rewards[(s, a)] + self.discount * next
        })
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("has a negative or non-finite entry".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// Action probabilities `p(a | s)`, one distribution per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPolicy {
    probs: Table,
}

impl DirectPolicy {
    pub fn new(probs: Table) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            let row: Vec<f64> = row.iter().copied().collect();
            check_distribution(&row)
                .map_err(|msg| Error::invalid(format!("policy row {s} {msg}")))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Table::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::invalid(format!("action {bad} out of range")));
        }
        let probs = Table::from_fn(actions.len(), n_actions, |s, a| {
            if actions[s] == a {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn into_inner(self) -> Table {
        self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn max_prob_per_state(&self) -> Vec<f64> {
        self.probs.row_iter().map(|r| r.max()).collect()
    }
}

/// Dense linear feature map `logits = reshape(F θ)` with `F` of shape `(|S|·|A|, d)`.
///
/// Row `s * |A| + a` of `F` holds the features of the pair `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeatures {
    n_states: usize,
    n_actions: usize,
    matrix: DMatrix<f64>,
}

impl LinearFeatures {
    pub fn new(n_states: usize, n_actions: usize, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != n_states * n_actions || matrix.ncols() == 0 {
            return Err(Error::invalid(format!(
                "feature matrix has shape {:?}, expected ({}, d > 0)",
                matrix.shape(),
                n_states * n_actions
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature matrix must be finite"));
        }
        Ok(Self {
            n_states,
            n_actions,
            matrix,
        })
    }

    /// Identity features: the tabular parameterization written as a linear one.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            n_states,
            n_actions,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn logits(&self, theta: &DVector<f64>) -> Table {
        let flat = &self.matrix * theta;
        Table::from_fn(self.n_states, self.n_actions, |s, a| flat[s * self.n_actions + a])
    }

    /// Chain rule `Fᵀ vec(g)` for a gradient `g` with respect to the logits.
    pub fn pullback(&self, grad_logits: &Table) -> DVector<f64> {
        let flat = DVector::from_fn(self.n_states * self.n_actions, |i, _| {
            grad_logits[(i / self.n_actions, i % self.n_actions)]
        });
        self.matrix.tr_mul(&flat)
    }
}

/// How parameters θ map to logits.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Parameterization {
    /// `z(a, s) = θ[s·|A| + a]`.
    #[default]
    Tabular,
    Linear(LinearFeatures),
}

impl Parameterization {
    pub fn dim(&self, n_states: usize, n_actions: usize) -> usize {
        match self {
            Parameterization::Tabular => n_states * n_actions,
            Parameterization::Linear(f) => f.dim(),
        }
    }

    pub fn logits(&self, n_states: usize, n_actions: usize, theta: &DVector<f64>) -> Table {
        match self {
            Parameterization::Tabular => {
                Table::from_fn(n_states, n_actions, |s, a| theta[s * n_actions + a])
            }
            Parameterization::Linear(f) => f.logits(theta),
        }
    }

    pub fn pullback(&self, grad_logits: &Table) -> DVector<f64> {
        match self {
            Parameterization::Tabular => {
                let (ns, na) = grad_logits.shape();
                DVector::from_fn(ns * na, |i, _| grad_logits[(i / na, i % na)])
            }
            Parameterization::Linear(f) => f.pullback(grad_logits),
        }
    }
}

/// Logits `z(a, s)`; probabilities are the per-state softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    logits: Table,
}

impl SoftmaxPolicy {
    /// Logits may be `-inf` (a zero-probability action) but every row needs a finite entry.
    pub fn new(logits: Table) -> Result<Self> {
        for (s, row) in logits.row_iter().enumerate() {
            if row.iter().any(|z| z.is_nan() || *z == f64::INFINITY) {
                return Err(Error::invalid(format!("logits row {s} contains NaN or +inf")));
            }
            if row.iter().all(|z| *z == f64::NEG_INFINITY) {
                return Err(Error::invalid(format!("logits row {s} has no finite entry")));
            }
        }
        Ok(Self { logits })
    }

    pub fn from_features(features: &LinearFeatures, theta: &DVector<f64>) -> Result<Self> {
        Self::new(features.logits(theta))
    }

    /// `z = ln p`; zero probabilities become `-inf`.
    pub fn from_direct(policy: &DirectPolicy) -> Self {
        Self {
            logits: policy.probs().map(f64::ln),
        }
    }

    pub fn logits(&self) -> &Table {
        &self.logits
    }

    pub fn probs(&self) -> Table {
        softmax_rows(&self.logits)
    }

    pub fn to_direct(&self) -> DirectPolicy {
        DirectPolicy {
            probs: self.probs(),
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Table) -> Table {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|z| *z = (*z - m).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Everything exact evaluation yields for a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationBundle {
    pub v: DVector<f64>,
    pub q: Table,
    pub adv: Table,
    /// Unnormalised discounted state occupancy, sums to `1 / (1 - γ)`.
    pub d_occ: DVector<f64>,
    /// `μ(s, a) = d(s) p(a | s)`.
    pub mu_occ: Table,
    pub ret: f64,
}

fn check_policy_shape(mdp: &TabularMdp, probs: &Table) -> Result<()> {
    if probs.shape() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::invalid(format!(
            "policy shape {:?} does not match MDP ({}, {})",
            probs.shape(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// State-to-state kernel `P_π(s, s') = Σ_a p(a|s) P(s'|s, a)`.
fn policy_kernel(mdp: &TabularMdp, probs: &Table) -> DMatrix<f64> {
    let n = mdp.n_states;
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let p = probs[(s, a)];
            if p == 0.0 {
                continue;
            }
            for (s2, t) in mdp.next_dist(s, a).iter().enumerate() {
                kernel[(s, s2)] += p * t;
            }
        }
    }
    kernel
}

/// Exact V, Q, A, occupancies and return via LU solves of `(I - γ P_π)`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &DirectPolicy) -> Result<EvaluationBundle> {
    let probs = policy.probs();
    check_policy_shape(mdp, probs)?;
    let n = mdp.n_states;
    let gamma = mdp.discount;

    let kernel = policy_kernel(mdp, probs);
    let system = DMatrix::identity(n, n) - &kernel * gamma;
    let r_pi = DVector::from_fn(n, |s, _| {
        (0..mdp.n_actions).map(|a| probs[(s, a)] * mdp.rewards[(s, a)]).sum::<f64>()
    });

    let v = system
        .clone()
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::invalid("singular evaluation system (I - γP_π)"))?;
    let d_occ = system
        .transpose()
        .lu()
        .solve(&mdp.initial)
        .ok_or_else(|| Error::invalid("singular occupancy system (I - γP_πᵀ)"))?;

    let q = mdp.lookahead(&v);
    let adv = Table::from_fn(n, mdp.n_actions, |s, a| q[(s, a)] - v[s]);
    let mu_occ = Table::from_fn(n, mdp.n_actions, |s, a| d_occ[s] * probs[(s, a)]);
    let ret = mdp.initial.dot(&v);

    Ok(EvaluationBundle {
        v,
        q,
        adv,
        d_occ,
        mu_occ,
        ret,
    })
}

/// `J(π)` alone.
pub fn expected_return(mdp: &TabularMdp, policy: &DirectPolicy) -> Result<f64> {
    evaluate_policy(mdp, policy).map(|b| b.ret)
}

/// `∂J / ∂p(a|s) = d(s) Q(s, a)`.
pub fn grad_return_direct(mdp: &TabularMdp, policy: &DirectPolicy) -> Result<Table> {
    let eval = evaluate_policy(mdp, policy)?;
    Ok(Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        eval.d_occ[s] * eval.q[(s, a)]
    }))
}

/// `∂J / ∂z(a, s) = d(s) A(s, a) p(a|s)`.
pub fn grad_return_softmax(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<Table> {
    let direct = policy.to_direct();
    check_policy_shape(mdp, direct.probs())?;
    let eval = evaluate_policy(mdp, &direct)?;
    Ok(Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        eval.d_occ[s] * eval.adv[(s, a)] * direct.prob(s, a)
    }))
}

/// Gradient of `J` with respect to parameters of a linear softmax policy.
pub fn grad_return_params(
    mdp: &TabularMdp,
    param: &Parameterization,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let policy = SoftmaxPolicy::new(param.logits(mdp.n_states, mdp.n_actions, theta))?;
    let g = grad_return_softmax(mdp, &policy)?;
    Ok(param.pullback(&g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub values: DVector<f64>,
    /// Greedy action per state; ties go to the lowest index.
    pub greedy: Vec<usize>,
    pub iterations: usize,
}

/// Relative width of the tie band used when picking greedy actions.
const TIE_TOL: f64 = 1e-10;

/// Lowest-index argmax with a small relative tie band.
pub fn greedy_actions(q: &Table) -> Vec<usize> {
    q.row_iter()
        .map(|row| {
            let best = row.max();
            let band = TIE_TOL * best.abs().max(1.0);
            row.iter().position(|&x| x >= best - band).unwrap_or(0)
        })
        .collect()
}

/// Bellman optimality iteration until the sup-norm residual drops below `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::invalid("value iteration tolerance must be positive"));
    }
    let mut values = DVector::zeros(mdp.n_states);
    let mut iterations = 0;
    loop {
        let q = mdp.lookahead(&values);
        let next = DVector::from_fn(mdp.n_states, |s, _| q.row(s).max());
        let residual = (&next - &values).amax();
        if residual < tol {
            return Ok(ValueIteration {
                greedy: greedy_actions(&q),
                values,
                iterations,
            });
        }
        values = next;
        iterations += 1;
    }
}

/// Optimal return, evaluated exactly on the greedy policy of a tight value iteration and
/// polished by policy iteration.
pub fn optimal_return(mdp: &TabularMdp) -> Result<(f64, DirectPolicy)> {
    let vi = value_iteration(mdp, 1e-10)?;
    let mut actions = vi.greedy;
    loop {
        let policy = DirectPolicy::deterministic(&actions, mdp.n_actions)?;
        let eval = evaluate_policy(mdp, &policy)?;
        let improved: Vec<usize> = eval
            .q
            .row_iter()
            .zip(&actions)
            .map(|(row, &cur)| {
                let best = row.max();
                if row[cur] >= best - TIE_TOL * best.abs().max(1.0) {
                    cur
                } else {
                    row.iter().position(|&x| x == best).unwrap_or(cur)
                }
            })
            .collect();
        if improved == actions {
            return Ok((eval.ret, policy));
        }
        actions = improved;
    }
}
