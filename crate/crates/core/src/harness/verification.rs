//! Named invariant checks over random instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::VerifyExperiment;
use super::output::ResultRow;
use crate::bandits::{
    exp3_step, iw_reward_estimate, lb_iw_loss_estimate, run_bandit, sexp3_step, Algorithm,
    BernoulliBandit, Exp3Variant, ETA_GRID,
};
use crate::envs::{build_cliff_mdp, random_mdp, safe_path_policy, CliffSpec};
use crate::exec::Exec;
use crate::fma::{
    closed_form_npg, closed_form_softmax_exp, inner_loop, run_fma_pg, step_size_direct,
    step_size_softmax, surrogate_softmax, surrogate_softmax_kl_form, verify_lower_bound,
    AdvantageCenter, FmaConfig, InnerStep, Objective, Representation, SurrogateContext,
};
use crate::mdp::{
    evaluate_policy, grad_return_direct, grad_return_softmax, greedy_actions, optimal_return,
    softmax_rows, DirectPolicy, Parameterization, SoftmaxPolicy, Table, TabularMdp,
};
use crate::mirror::{
    bregman_per_state, exp_map_kl_residual, kl_divergence, softmax, MirrorKind, MirrorMap,
};
use crate::rng::{split, substream, Stream};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    pub failures: usize,
    /// Smallest `tolerance − error` (or bound margin) seen; negative on failure.
    pub worst_margin: f64,
    pub witness: Option<String>,
    /// The check is a negative control: it passes when violations are found.
    pub expects_violation: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn rows(&self, experiment: &str) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for c in &self.checks {
            for (metric, value) in [
                ("passed", if c.passed { 1.0 } else { 0.0 }),
                ("samples", c.samples as f64),
                ("failures", c.failures as f64),
                ("worst_margin", c.worst_margin),
            ] {
                rows.push(ResultRow {
                    experiment: experiment.to_string(),
                    algorithm: c.name.to_string(),
                    eta: None,
                    m: None,
                    seed: Some(self.seed),
                    step: None,
                    metric: metric.to_string(),
                    value,
                });
            }
        }
        rows
    }

    pub fn summary(&self) -> String {
        let mut text = String::new();
        for c in &self.checks {
            text.push_str(&format!(
                "{} {:<40} samples={:<6} failures={:<4} worst_margin={:.3e}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.samples,
                c.failures,
                c.worst_margin
            ));
            if !c.passed {
                if let Some(w) = &c.witness {
                    text.push_str(&format!("     witness: {w}\n"));
                }
            }
        }
        text
    }
}

/// Accumulates margins for one check.
struct Tally {
    samples: usize,
    failures: usize,
    worst: f64,
    witness: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Self { samples: 0, failures: 0, worst: f64::INFINITY, witness: None }
    }

    /// Record `margin` (≥ 0 passes); the witness is built only for the worst failure.
    fn margin(&mut self, margin: f64, witness: impl FnOnce() -> String) {
        self.samples += 1;
        let bad = !(margin >= 0.0);
        if bad {
            self.failures += 1;
        }
        if bad && (self.witness.is_none() || margin < self.worst) {
            self.witness = Some(witness());
        }
        if margin < self.worst || margin.is_nan() {
            self.worst = margin;
        }
    }

    fn error(&mut self, err: f64, tol: f64, witness: impl FnOnce() -> String) {
        self.margin(tol - err, witness);
    }

    fn fail(&mut self, msg: String) {
        self.samples += 1;
        self.failures += 1;
        self.worst = f64::NEG_INFINITY;
        self.witness.get_or_insert(msg);
    }

    fn finish(self, name: &'static str) -> CheckResult {
        CheckResult {
            name,
            passed: self.failures == 0 && self.samples > 0,
            samples: self.samples,
            failures: self.failures,
            worst_margin: self.worst,
            witness: self.witness,
            expects_violation: false,
        }
    }
}

type CheckFn = fn(&Ctx) -> CheckResult;

struct Ctx {
    seed: u64,
    counts: VerifyExperiment,
}

impl Ctx {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        substream(split(self.seed, salt), Stream::PolicySamples)
    }

    /// Random MDP `i` with `|S| ≤ 6`, `|A| ≤ 4` and rewards in `[0, 1]`.
    fn mdp(&self, salt: u64, i: usize, gamma: f64) -> Result<TabularMdp> {
        let seed = split(split(self.seed, salt), i as u64);
        let ns = 1 + (split(seed, 1) % 6) as usize;
        let na = 2 + (split(seed, 2) % 3) as usize;
        random_mdp(ns, na, gamma, seed, (0.0, 1.0))
    }
}

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

fn random_logits(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Table {
    Table::from_fn(ns, na, |_, _| rng.random_range(-3.0..3.0))
}

fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> DirectPolicy {
    DirectPolicy::new(softmax_rows(&random_logits(rng, ns, na))).expect("softmax rows are distributions")
}

fn rel_err(a: &Table, b: &Table) -> f64 {
    (a - b).amax() / b.amax().max(1e-10)
}

macro_rules! tri {
    ($tally:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => {
                $tally.fail(err.to_string());
                continue;
            }
        }
    };
}

fn occupancy_mass(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(1);
    for i in 0..ctx.counts.instances {
        let gamma = GAMMAS[i % 3];
        let mdp = tri!(t, ctx.mdp(1, i, gamma));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eval = tri!(t, evaluate_policy(&mdp, &pi));
        let expected = 1.0 / (1.0 - gamma);
        t.error((eval.d_occ.sum() - expected).abs() / expected, 1e-9, || format!("instance {i}"));
    }
    t.finish("mdp.occupancy_mass")
}

fn advantage_centered(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(2);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(2, i, GAMMAS[i % 3]));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eval = tri!(t, evaluate_policy(&mdp, &pi));
        let worst = pi.probs().component_mul(&eval.adv).column_sum().amax();
        let scale = eval.q.amax().max(1.0);
        t.error(worst / scale, 1e-12, || format!("instance {i}"));
    }
    t.finish("mdp.advantage_centered")
}

fn gradient_direct_fd(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(3);
    let h: f64 = 1e-5;
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(3, i, GAMMAS[i % 3]));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let g = tri!(t, grad_return_direct(&mdp, &pi));
        // Directional derivatives along simplex-preserving moves e_a − e_0.
        let mut worst: f64 = 0.0;
        for s in 0..mdp.n_states() {
            for a in 1..mdp.n_actions() {
                let h = h.min(0.5 * pi.prob(s, 0)).min(0.5 * pi.prob(s, a));
                let shifted = |sign: f64| {
                    let mut p = pi.probs().clone();
                    p[(s, a)] += sign * h;
                    p[(s, 0)] -= sign * h;
                    evaluate_policy(&mdp, &DirectPolicy::new(p)?).map(|e| e.ret)
                };
                let fd = match (shifted(1.0), shifted(-1.0)) {
                    (Ok(up), Ok(down)) => (up - down) / (2.0 * h),
                    _ => f64::NAN,
                };
                let exact = g[(s, a)] - g[(s, 0)];
                worst = worst.max((fd - exact).abs() / g.amax().max(1e-10));
            }
        }
        t.error(worst, 1e-6, || format!("instance {i}"));
    }
    t.finish("mdp.gradient_direct_fd")
}

fn gradient_softmax_fd(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(4);
    let h: f64 = 1e-5;
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(4, i, GAMMAS[i % 3]));
        let z = random_logits(&mut rng, mdp.n_states(), mdp.n_actions());
        let g = tri!(t, grad_return_softmax(&mdp, &tri!(t, SoftmaxPolicy::new(z.clone()))));
        let ret = |z: &Table| evaluate_policy(&mdp, &DirectPolicy::new(softmax_rows(z))?).map(|e| e.ret);
        let mut fd = Table::zeros(z.nrows(), z.ncols());
        for s in 0..z.nrows() {
            for a in 0..z.ncols() {
                let mut up = z.clone();
                up[(s, a)] += h;
                let mut down = z.clone();
                down[(s, a)] -= h;
                fd[(s, a)] = match (ret(&up), ret(&down)) {
                    (Ok(u), Ok(d)) => (u - d) / (2.0 * h),
                    _ => f64::NAN,
                };
            }
        }
        t.error(rel_err(&fd, &g), 1e-6, || format!("instance {i}"));
    }
    t.finish("mdp.gradient_softmax_fd")
}

fn value_iteration_dominates(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(5);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(5, i, 0.9));
        let (opt, _) = tri!(t, optimal_return(&mdp));
        for _ in 0..ctx.counts.trials {
            let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
            let j = tri!(t, evaluate_policy(&mdp, &pi)).ret;
            t.margin(opt - j + 1e-9, || format!("instance {i}: J = {j} > J* = {opt}"));
        }
    }
    t.finish("mdp.value_iteration_dominates")
}

fn bregman_nonnegative(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(6);
    for i in 0..ctx.counts.instances * ctx.counts.trials {
        let n = 2 + i % 5;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (px, py) = (softmax(&x), softmax(&y));
        for (map, a, b) in [
            (MirrorMap::SquaredEuclidean, &x, &y),
            (MirrorMap::NegativeEntropy, &px, &py),
            (MirrorMap::normalized_exponential(&y), &x, &y),
        ] {
            let d = tri!(t, bregman_per_state(&map, a, b));
            t.margin(d + 1e-12, || format!("{:?} at x = {a:?}, y = {b:?}: {d}", map.kind()));
        }
    }
    t.finish("mirror.bregman_nonnegative")
}

fn negative_entropy_is_kl(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(7);
    for i in 0..ctx.counts.instances * ctx.counts.trials {
        let n = 2 + i % 5;
        let p = softmax(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let q = softmax(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let d = tri!(t, bregman_per_state(&MirrorMap::NegativeEntropy, &p, &q));
        t.error((d - kl_divergence(&p, &q)).abs(), 1e-12, || format!("p = {p:?}, q = {q:?}"));
    }
    t.finish("mirror.negative_entropy_is_kl")
}

fn exp_map_identity(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(8);
    for i in 0..ctx.counts.instances * ctx.counts.trials {
        let n = 2 + i % 5;
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let za: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = tri!(t, exp_map_kl_residual(&z, &za));
        let err = (r.residual - r.normalizer_term).abs().max(-r.residual);
        t.error(err, 1e-9, || format!("z = {z:?}, anchor = {za:?}"));
    }
    t.finish("mirror.exp_map_kl_identity")
}

/// `(representation, mirror, η)` triples with the improvement-guaranteeing step sizes.
fn theoretical_setups(mdp: &TabularMdp) -> Vec<(Representation, MirrorKind, f64)> {
    let gamma = mdp.discount();
    let direct = step_size_direct(gamma, mdp.n_actions()).expect("valid discount");
    let soft = step_size_softmax(gamma).expect("valid discount");
    vec![
        (Representation::Direct, MirrorKind::NegativeEntropy, direct),
        (Representation::Direct, MirrorKind::SquaredEuclidean, direct),
        (Representation::Softmax, MirrorKind::NormalizedExponential, soft),
    ]
}

fn anchoring(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(9);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(9, i, 0.9));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        for (rep, mirror, eta) in theoretical_setups(&mdp) {
            for center in [AdvantageCenter::UseQ, AdvantageCenter::UseA] {
                let sc = tri!(t, SurrogateContext::new(&mdp, pi.clone(), eta, rep, mirror, center));
                let j = sc.eval().ret;
                let mut values = vec![tri!(t, sc.value(sc.objective(None), pi.probs()))];
                if rep == Representation::Softmax {
                    let sp = SoftmaxPolicy::from_direct(&pi);
                    values.push(tri!(t, surrogate_softmax_kl_form(&sc, &sp)));
                    values.push(j + tri!(t, sc.value(Objective::Sppo(0.2), pi.probs())));
                }
                for v in values {
                    t.error((v - j).abs() / j.abs().max(1.0), 1e-12, || {
                        format!("instance {i}, {rep:?}/{mirror:?}: ℓ = {v}, J = {j}")
                    });
                }
            }
        }
    }
    t.finish("fma.surrogate_anchoring")
}

fn anchor_gradient(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(10);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(10, i, 0.9));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let exact = tri!(t, grad_return_softmax(&mdp, &SoftmaxPolicy::from_direct(&pi)));
        for (rep, mirror, eta) in theoretical_setups(&mdp) {
            let sc = tri!(t, SurrogateContext::new(&mdp, pi.clone(), eta, rep, mirror, AdvantageCenter::UseQ));
            let g = tri!(t, sc.grad_logits(sc.objective(None), pi.probs()));
            t.error((&g - &exact).amax() / exact.amax().max(1.0), 1e-10, || {
                format!("instance {i}, {rep:?}/{mirror:?}")
            });
        }
    }
    t.finish("fma.anchor_gradient")
}

fn lower_bound(ctx: &Ctx, salt: u64, rep: Representation, factor: f64) -> Tally {
    let mut t = Tally::new();
    let mut rng = ctx.rng(salt);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(salt, i, 0.9));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let (mirror, eta) = match rep {
            Representation::Direct => (
                MirrorKind::NegativeEntropy,
                tri!(t, step_size_direct(mdp.discount(), mdp.n_actions())),
            ),
            Representation::Softmax => {
                (MirrorKind::NormalizedExponential, tri!(t, step_size_softmax(mdp.discount())))
            }
        };
        let sc = tri!(t, SurrogateContext::new(&mdp, pi, eta * factor, rep, mirror, AdvantageCenter::UseQ));
        let report = tri!(t, verify_lower_bound(&sc, ctx.counts.trials, split(ctx.seed, salt + i as u64)));
        for m in &report.margins {
            t.margin(m.surrogate_margin + crate::fma::verify::LOWER_BOUND_SLACK, || {
                format!("instance {i}, trial {}: J − ℓ = {}", m.trial, m.surrogate_margin)
            });
            if factor == 1.0 {
                t.margin(m.reward_shift_margin + crate::fma::verify::LOWER_BOUND_SLACK, || {
                    format!("instance {i}, trial {}: reward-shift margin {}", m.trial, m.reward_shift_margin)
                });
            }
        }
    }
    t
}

fn lower_bound_direct(ctx: &Ctx) -> CheckResult {
    lower_bound(ctx, 11, Representation::Direct, 1.0).finish("fma.lower_bound_direct")
}

fn lower_bound_softmax(ctx: &Ctx) -> CheckResult {
    lower_bound(ctx, 12, Representation::Softmax, 1.0).finish("fma.lower_bound_softmax")
}

fn lower_bound_negative_control(ctx: &Ctx) -> CheckResult {
    let t = lower_bound(ctx, 13, Representation::Softmax, ctx.counts.negative_control_factor);
    let found = t.failures > 0 && t.worst.is_finite();
    CheckResult {
        name: "fma.lower_bound_negative_control",
        samples: t.samples,
        failures: t.failures,
        worst_margin: t.worst,
        witness: t.witness,
        expects_violation: true,
        passed: found,
    }
}

fn eq_forms(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(14);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(14, i, GAMMAS[i % 3]));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eta = rng.random_range(0.01..2.0);
        let sc = tri!(t, SurrogateContext::new(
            &mdp, pi, eta, Representation::Softmax, MirrorKind::NormalizedExponential, AdvantageCenter::UseQ,
        ));
        for _ in 0..ctx.counts.trials {
            let cand = tri!(t, SoftmaxPolicy::new(random_logits(&mut rng, mdp.n_states(), mdp.n_actions())));
            let a = tri!(t, surrogate_softmax(&sc, &cand));
            let b = tri!(t, surrogate_softmax_kl_form(&sc, &cand));
            t.error((a - b).abs() / a.abs().max(1.0), 1e-10, || format!("instance {i}: {a} vs {b}"));
        }
    }
    t.finish("fma.log_ratio_equals_kl_form")
}

fn npg_center_invariance(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(15);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(15, i, 0.9));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eta = rng.random_range(0.01..5.0);
        let make = |c| {
            SurrogateContext::new(&mdp, pi.clone(), eta, Representation::Direct, MirrorKind::NegativeEntropy, c)
                .and_then(|sc| closed_form_npg(&sc))
        };
        let q = tri!(t, make(AdvantageCenter::UseQ));
        let a = tri!(t, make(AdvantageCenter::UseA));
        t.error((q.probs() - a.probs()).amax(), 1e-12, || format!("instance {i}, η = {eta}"));
    }
    t.finish("fma.npg_center_invariance")
}

/// Armijo ascent of a per-state objective over logits restricted to `support`, started
/// from the logits `z0`.
fn maximize_state(
    support: &[bool],
    z0: &[f64],
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let n = support.len();
    let probs = |z: &[f64]| {
        let zs: Vec<f64> = (0..n).map(|a| if support[a] { z[a] } else { f64::NEG_INFINITY }).collect();
        softmax(&zs)
    };
    let mut z: Vec<f64> = z0.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
    let mut value = f(&probs(&z));
    let mut alpha: f64 = 1.0;
    for _ in 0..20_000 {
        let g = grad(&probs(&z));
        let sq: f64 = g.iter().map(|x| x * x).sum();
        if sq < 1e-30 {
            break;
        }
        alpha = (2.0 * alpha).min(1e3);
        let mut moved = false;
        for _ in 0..80 {
            let cand: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + alpha * b).collect();
            let v = f(&probs(&cand));
            if v >= value + 1e-4 * alpha * sq {
                z = cand;
                value = v;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    probs(&z)
}

fn closed_form_agreement(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(16);
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(16, i, 0.9));
        let pi = random_policy(&mut rng, mdp.n_states(), mdp.n_actions());
        let eta = rng.random_range(0.01..1.0) * (1.0 - mdp.discount());
        let eval = tri!(t, evaluate_policy(&mdp, &pi));
        let na = mdp.n_actions();

        let sc = tri!(t, SurrogateContext::new(
            &mdp, pi.clone(), eta, Representation::Direct, MirrorKind::NegativeEntropy, AdvantageCenter::UseQ,
        ));
        let npg = tri!(t, closed_form_npg(&sc));
        let sc = tri!(t, SurrogateContext::new(
            &mdp, pi.clone(), eta, Representation::Softmax, MirrorKind::NormalizedExponential, AdvantageCenter::UseQ,
        ));
        let exp = tri!(t, closed_form_softmax_exp(&sc));

        for s in 0..mdp.n_states() {
            let pt: Vec<f64> = (0..na).map(|a| pi.prob(s, a)).collect();
            let q: Vec<f64> = (0..na).map(|a| eval.q[(s, a)]).collect();
            let adv: Vec<f64> = (0..na).map(|a| eval.adv[(s, a)]).collect();

            // Linearised return minus the reverse-KL proximity term.
            let support: Vec<bool> = pt.iter().map(|&p| p > 0.0).collect();
            let f = |p: &[f64]| {
                (0..na).map(|a| q[a] * p[a]).sum::<f64>() - kl_divergence(p, &pt) / eta
            };
            let g = |p: &[f64]| {
                let gp: Vec<f64> = (0..na)
                    .map(|a| if p[a] > 0.0 { q[a] - ((p[a] / pt[a]).ln() + 1.0) / eta } else { 0.0 })
                    .collect();
                let mean: f64 = (0..na).map(|a| p[a] * gp[a]).sum();
                (0..na).map(|a| p[a] * (gp[a] - mean)).collect()
            };
            let z0: Vec<f64> = pt.iter().map(|p| p.ln()).collect();
            let best = maximize_state(&support, &z0, f, g);
            let err = (0..na).map(|a| (best[a] - npg.prob(s, a)).abs()).fold(0.0, f64::max);
            t.error(err, 1e-6, || format!("npg: instance {i}, state {s}"));

            // Weighted log-probabilities with weights p_t (1 + ηA).
            let w: Vec<f64> = (0..na).map(|a| pt[a] * (1.0 + eta * adv[a])).collect();
            let support: Vec<bool> = w.iter().map(|&x| x > 0.0).collect();
            let total: f64 = w.iter().filter(|x| **x > 0.0).sum();
            let f = |p: &[f64]| (0..na).filter(|&a| w[a] > 0.0).map(|a| w[a] * p[a].ln()).sum::<f64>();
            let g = |p: &[f64]| (0..na).map(|a| w[a].max(0.0) - total * p[a]).collect();
            let best = maximize_state(&support, &z0, f, g);
            let err = (0..na).map(|a| (best[a] - exp.prob(s, a)).abs()).fold(0.0, f64::max);
            t.error(err, 1e-6, || format!("softmax exp: instance {i}, state {s}"));
        }
    }
    t.finish("fma.closed_form_agreement")
}

fn fixed_point(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(17);
    for i in 0..ctx.counts.instances {
        let base = tri!(t, ctx.mdp(17, i, 0.9));
        let (ns, na) = (base.n_states(), base.n_actions());
        let c: f64 = rng.random();
        let mut transitions = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                transitions.extend_from_slice(base.next_dist(s, a));
            }
        }
        let mdp = tri!(t, TabularMdp::new(
            ns, na, transitions, Table::from_element(ns, na, c), base.initial().clone(), 0.9,
        ));
        let pi = random_policy(&mut rng, ns, na);
        let mut outputs = Vec::new();
        for (rep, mirror, eta) in theoretical_setups(&mdp) {
            let sc = tri!(t, SurrogateContext::new(&mdp, pi.clone(), eta, rep, mirror, AdvantageCenter::UseQ));
            let theta0 = Parameterization::Tabular.pullback(SoftmaxPolicy::from_direct(&pi).logits());
            let out = tri!(t, inner_loop(&sc, sc.objective(None), &Parameterization::Tabular, &theta0, 5, InnerStep::default()));
            outputs.push(tri!(t, sc.probs_at(&Parameterization::Tabular, &out.theta)));
            match rep {
                Representation::Direct if mirror == MirrorKind::NegativeEntropy => {
                    outputs.push(tri!(t, closed_form_npg(&sc)).into_inner())
                }
                Representation::Softmax => outputs.push(tri!(t, closed_form_softmax_exp(&sc)).into_inner()),
                _ => {}
            }
        }
        for (k, p) in outputs.into_iter().enumerate() {
            t.error((&p - pi.probs()).amax(), 1e-12, || format!("instance {i}, output {k}"));
        }
    }
    t.finish("fma.fixed_point")
}

fn monotone_improvement(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    for i in 0..ctx.counts.instances {
        let mdp = tri!(t, ctx.mdp(18, i, 0.9));
        for m in [1, 10, 100] {
            let trace = tri!(t, run_fma_pg(&mdp, &FmaConfig::softmax(10, m)));
            let worst = trace
                .returns
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            t.margin(worst + crate::fma::IMPROVEMENT_SLACK, || format!("instance {i}, m = {m}: ΔJ = {worst}"));
        }
    }
    t.finish("fma.monotone_improvement")
}

fn bandit_simplex(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(19);
    for i in 0..ctx.counts.instances * ctx.counts.trials {
        let k = 2 + i % 9;
        let p = softmax(&(0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let arm = rng.random_range(0..k);
        let reward = f64::from(rng.random_bool(0.5) as u8);
        let eta = ETA_GRID[i % ETA_GRID.len()];
        let gain = tri!(t, iw_reward_estimate(&p, arm, reward));
        let loss = tri!(t, lb_iw_loss_estimate(&p, arm, reward));
        for out in [
            exp3_step(&p, &gain, eta, Exp3Variant::Gain),
            exp3_step(&p, &loss, eta, Exp3Variant::Loss),
            sexp3_step(&p, &gain, eta),
        ] {
            let out = tri!(t, out);
            let err = (out.iter().sum::<f64>() - 1.0).abs().max(-out.iter().copied().fold(0.0, f64::min));
            t.error(err, 1e-12, || format!("p = {p:?}, arm {arm}, η = {eta}"));
        }
    }
    t.finish("bandits.updates_stay_on_simplex")
}

fn bandit_unbiased(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(20);
    let draws = 100_000;
    for i in 0..ctx.counts.instances.min(5) {
        let k = 2 + i % 4;
        let p = softmax(&(0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let means: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let mut sum = vec![0.0; k];
        let mut sum_sq = vec![0.0; k];
        let mut loss_sum = vec![0.0; k];
        let mut loss_sq = vec![0.0; k];
        for _ in 0..draws {
            let u: f64 = rng.random();
            let arm = p.iter().scan(0.0, |acc, x| { *acc += x; Some(*acc) }).position(|c| u < c).unwrap_or(k - 1);
            let r = f64::from(rng.random_bool(means[arm]) as u8);
            let est = tri!(t, iw_reward_estimate(&p, arm, r));
            let lest = tri!(t, lb_iw_loss_estimate(&p, arm, r));
            for a in 0..k {
                sum[a] += est[a];
                sum_sq[a] += est[a] * est[a];
                loss_sum[a] += lest[a];
                loss_sq[a] += lest[a] * lest[a];
            }
        }
        let n = draws as f64;
        for a in 0..k {
            for (s, sq, target) in [(sum[a], sum_sq[a], means[a]), (loss_sum[a], loss_sq[a], 1.0 - means[a])] {
                let mean = s / n;
                let se = ((sq / n - mean * mean) / n).sqrt();
                t.margin(3.0 * se - (mean - target).abs(), || {
                    format!("arm {a}: mean {mean} vs {target} (se {se})")
                });
            }
        }
    }
    t.finish("bandits.estimators_unbiased")
}

fn bandit_advantage_form(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let mut rng = ctx.rng(21);
    for i in 0..ctx.counts.instances * ctx.counts.trials {
        let k = 2 + i % 9;
        let p = softmax(&(0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let arm = rng.random_range(0..k);
        let est = tri!(t, iw_reward_estimate(&p, arm, 1.0));
        let baseline: f64 = p.iter().zip(&est).map(|(a, b)| a * b).sum();
        let eta = 0.05;
        let raw: f64 = p.iter().zip(&est).map(|(pa, r)| pa * (1.0 + eta * (r - baseline))).sum();
        t.error((raw - 1.0).abs(), 1e-12, || format!("p = {p:?}, arm {arm}"));
    }
    t.finish("bandits.advantage_form_preserves_mass")
}

fn bandit_regret(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    for i in 0..ctx.counts.instances.min(10) {
        let env_seed = split(ctx.seed, 2200 + i as u64);
        let bandit = tri!(t, BernoulliBandit::sample(2 + i % 9, 0.5, env_seed));
        for alg in Algorithm::ALL {
            let a = tri!(t, run_bandit(&bandit, alg, 0.05, 500, env_seed));
            let b = tri!(t, run_bandit(&bandit, alg, 0.05, 500, env_seed));
            let drop = a.regret.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
            t.margin(-drop, || format!("{alg:?} regret decreased by {drop}"));
            t.margin(if a == b { 0.0 } else { -1.0 }, || format!("{alg:?} rerun differs"));
        }
    }
    t.finish("bandits.regret_monotone_and_deterministic")
}

fn cliff_structure(_ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    let spec = CliffSpec::default();
    let mdp = match build_cliff_mdp(&spec) {
        Ok(m) => m,
        Err(e) => {
            t.fail(e.to_string());
            return t.finish("envs.cliff_structure");
        }
    };
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let err = (mdp.next_dist(s, a).iter().sum::<f64>() - 1.0).abs();
            t.error(err, 1e-12, || format!("row ({s}, {a})"));
        }
    }
    let goal = spec.index(spec.goal);
    t.margin(mdp.next_dist(goal, 0)[goal] - 1.0, || "goal does not self-loop".into());
    match (optimal_return(&mdp), safe_path_policy(&spec).and_then(|p| evaluate_policy(&mdp, &p))) {
        (Ok((opt, policy)), Ok(safe)) => {
            t.margin(opt - safe.ret - 1e-9, || format!("optimal {opt} vs safe {}", safe.ret));
            // Follow the greedy optimal policy from the start; it must skirt the cliff.
            let actions = greedy_actions(policy.probs());
            let mut s = spec.index(spec.start);
            let mut adjacent = false;
            for _ in 0..mdp.n_states() {
                let (r, c) = spec.cell(s);
                adjacent |= spec.cliff.iter().any(|&(cr, cc)| cr.abs_diff(r) + cc.abs_diff(c) == 1);
                if s == goal {
                    break;
                }
                s = mdp.next_dist(s, actions[s]).iter().position(|&p| p == 1.0).unwrap_or(s);
            }
            t.margin(if adjacent && s == goal { 0.0 } else { -1.0 }, || "optimal path avoids the cliff edge".into());
        }
        (Err(e), _) | (_, Err(e)) => t.fail(e.to_string()),
    }
    t.finish("envs.cliff_structure")
}

fn random_mdp_rows(ctx: &Ctx) -> CheckResult {
    let mut t = Tally::new();
    for i in 0..ctx.counts.instances {
        let a = tri!(t, ctx.mdp(23, i, 0.9));
        let b = tri!(t, ctx.mdp(23, i, 0.9));
        t.margin(if a == b { 0.0 } else { -1.0 }, || format!("instance {i} not reproducible"));
        for s in 0..a.n_states() {
            for act in 0..a.n_actions() {
                let err = (a.next_dist(s, act).iter().sum::<f64>() - 1.0).abs();
                t.error(err, 1e-12, || format!("instance {i}, row ({s}, {act})"));
            }
        }
    }
    t.finish("envs.random_mdp_rows")
}

const CHECKS: &[CheckFn] = &[
    occupancy_mass,
    advantage_centered,
    gradient_direct_fd,
    gradient_softmax_fd,
    value_iteration_dominates,
    bregman_nonnegative,
    negative_entropy_is_kl,
    exp_map_identity,
    anchoring,
    anchor_gradient,
    lower_bound_direct,
    lower_bound_softmax,
    lower_bound_negative_control,
    eq_forms,
    npg_center_invariance,
    closed_form_agreement,
    fixed_point,
    monotone_improvement,
    bandit_simplex,
    bandit_unbiased,
    bandit_advantage_form,
    bandit_regret,
    cliff_structure,
    random_mdp_rows,
];

/// Run every named check; checks run concurrently but the report order is fixed.
pub fn run_verification_suite(seed: u64, counts: &VerifyExperiment, exec: Exec) -> VerificationReport {
    let ctx = Ctx { seed, counts: counts.clone() };
    let checks = exec.map(CHECKS, |check| check(&ctx));
    VerificationReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let counts = VerifyExperiment { instances: 3, trials: 5, negative_control_factor: 100.0 };
        let report = run_verification_suite(7, &counts, Exec::Sequential);
        assert!(report.passed(), "{}", report.summary());
    }
}
