//! Bernoulli bandits, importance-weighted estimators and the EXP3 family.
//!
//! IWEXP3 and LBIWEXP3 are the exponential-weights updates driven by reward and loss
//! estimates respectively; sEXP3 replaces the exponential with the multiplicative
//! `1 + η r̂` factor of the softmax representation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::rng::{split, substream, Stream};
use crate::{Error, Result, SIMPLEX_TOL};

/// Step-size grid used to tune every algorithm.
pub const ETA_GRID: [f64; 5] = [0.5, 0.05, 0.005, 0.0005, 0.00005];
pub const DEFAULT_HORIZON: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernoulliBandit {
    pub means: Vec<f64>,
    pub gap: f64,
    pub env_seed: u64,
}

impl BernoulliBandit {
    /// Means drawn i.i.d. from `U(0.5 − Δ/2, 0.5 + Δ/2)`.
    pub fn sample(k: usize, gap: f64, env_seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("a bandit needs at least one arm"));
        }
        if !(0.0..=1.0).contains(&gap) {
            return Err(Error::invalid(format!("gap must lie in [0, 1], got {gap}")));
        }
        let mut rng = substream(env_seed, Stream::BanditMeans);
        let dist = Uniform::new_inclusive(0.5 - gap / 2.0, 0.5 + gap / 2.0)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let means = (0..k).map(|_| dist.sample(&mut rng)).collect();
        Ok(Self { means, gap, env_seed })
    }

    pub fn from_means(means: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid("means must be a non-empty vector in [0, 1]"));
        }
        Ok(Self { means, gap: f64::NAN, env_seed: 0 })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn best_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Iwexp3,
    Lbiwexp3,
    Sexp3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Iwexp3, Algorithm::Lbiwexp3, Algorithm::Sexp3];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Iwexp3 => "iwexp3",
            Algorithm::Lbiwexp3 => "lbiwexp3",
            Algorithm::Sexp3 => "sexp3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exp3Variant {
    Gain,
    Loss,
}

fn check_chosen(probs: &[f64], chosen: usize) -> Result<f64> {
    match probs.get(chosen) {
        Some(&p) if p > 0.0 => Ok(p),
        Some(_) => Err(Error::Estimator(format!("arm {chosen} was chosen with zero probability"))),
        None => Err(Error::Estimator(format!("arm {chosen} out of range"))),
    }
}

/// `r̂(a) = 1{A = a} r / p(a)`.
pub fn iw_reward_estimate(probs: &[f64], chosen: usize, reward: f64) -> Result<Vec<f64>> {
    let p = check_chosen(probs, chosen)?;
    let mut est = vec![0.0; probs.len()];
    est[chosen] = reward / p;
    Ok(est)
}

/// `ℓ̂(a) = 1{A = a} (1 − r) / p(a)`.
pub fn lb_iw_loss_estimate(probs: &[f64], chosen: usize, reward: f64) -> Result<Vec<f64>> {
    iw_reward_estimate(probs, chosen, 1.0 - reward)
}

fn normalize(mut p: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = p.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::StepSize(format!("bandit update produced total mass {total}")));
    }
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > SIMPLEX_TOL * probs.len() as f64 {
        return Err(Error::invalid(format!("bandit policy is not a distribution (sum {total})")));
    }
    Ok(())
}

/// Exponential weights: `p' ∝ p exp(±η x)`.
pub fn exp3_step(probs: &[f64], estimate: &[f64], eta: f64, variant: Exp3Variant) -> Result<Vec<f64>> {
    check_simplex(probs)?;
    if estimate.len() != probs.len() || estimate.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("estimate must be finite with one entry per arm"));
    }
    let sign = match variant {
        Exp3Variant::Gain => 1.0,
        Exp3Variant::Loss => -1.0,
    };
    let exps: Vec<f64> = estimate.iter().map(|x| sign * eta * x).collect();
    let shift = probs
        .iter()
        .zip(&exps)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, e)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    normalize(probs.iter().zip(&exps).map(|(p, e)| p * (e - shift).exp()).collect())
}

/// `p' ∝ p max(1 + η r̂, 0)`.
pub fn sexp3_step(probs: &[f64], estimate: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_simplex(probs)?;
    if estimate.len() != probs.len() || estimate.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("estimate must be finite with one entry per arm"));
    }
    let raw: Vec<f64> = probs
        .iter()
        .zip(estimate)
        .map(|(p, x)| p * (1.0 + eta * x).max(0.0))
        .collect();
    if raw.iter().all(|&x| x == 0.0) {
        return Err(Error::StepSize(format!("every sEXP3 factor clamped to zero at η = {eta}")));
    }
    normalize(raw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretTrace {
    /// Cumulative expected regret after each round.
    pub regret: Vec<f64>,
    pub arms: Vec<usize>,
    pub agent_seed: u64,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }
}

/// Arm selection, reward draws and updates for a single run.
struct Simulation<'a> {
    bandit: &'a BernoulliBandit,
    algorithm: Algorithm,
    eta: f64,
    probs: Vec<f64>,
    agent: ChaCha8Rng,
    rewards: ChaCha8Rng,
    regret: f64,
    best: f64,
}

impl<'a> Simulation<'a> {
    fn new(bandit: &'a BernoulliBandit, algorithm: Algorithm, eta: f64, agent_seed: u64) -> Self {
        let k = bandit.k();
        Self {
            bandit,
            algorithm,
            eta,
            probs: vec![1.0 / k as f64; k],
            agent: substream(agent_seed, Stream::BanditAgent),
            rewards: substream(split(bandit.env_seed, agent_seed), Stream::BanditRewards),
            regret: 0.0,
            best: bandit.best_mean(),
        }
    }

    fn sample_arm(&mut self) -> usize {
        let u: f64 = self.agent.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (a, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = a;
            }
            acc += p;
            if u < acc && p > 0.0 {
                return a;
            }
        }
        last_positive
    }

    fn round(&mut self) -> Result<usize> {
        let arm = self.sample_arm();
        let mean = self.bandit.means[arm];
        let reward = if self.rewards.random::<f64>() < mean { 1.0 } else { 0.0 };
        self.probs = match self.algorithm {
            Algorithm::Iwexp3 => exp3_step(
                &self.probs,
                &iw_reward_estimate(&self.probs, arm, reward)?,
                self.eta,
                Exp3Variant::Gain,
            )?,
            Algorithm::Lbiwexp3 => exp3_step(
                &self.probs,
                &lb_iw_loss_estimate(&self.probs, arm, reward)?,
                self.eta,
                Exp3Variant::Loss,
            )?,
            Algorithm::Sexp3 => {
                sexp3_step(&self.probs, &iw_reward_estimate(&self.probs, arm, reward)?, self.eta)?
            }
        };
        self.regret += self.best - mean;
        Ok(arm)
    }
}

fn check_run(eta: f64, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("η must be positive, got {eta}")));
    }
    Ok(())
}

/// Simulate `horizon` rounds from the uniform policy.
pub fn run_bandit(
    bandit: &BernoulliBandit,
    algorithm: Algorithm,
    eta: f64,
    horizon: usize,
    agent_seed: u64,
) -> Result<RegretTrace> {
    check_run(eta, horizon)?;
    let mut sim = Simulation::new(bandit, algorithm, eta, agent_seed);
    let mut regret = Vec::with_capacity(horizon);
    let mut arms = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        arms.push(sim.round()?);
        regret.push(sim.regret);
    }
    Ok(RegretTrace { regret, arms, agent_seed })
}

/// Same simulation as [`run_bandit`], keeping only the final cumulative regret.
pub fn final_regret(
    bandit: &BernoulliBandit,
    algorithm: Algorithm,
    eta: f64,
    horizon: usize,
    agent_seed: u64,
) -> Result<f64> {
    check_run(eta, horizon)?;
    let mut sim = Simulation::new(bandit, algorithm, eta, agent_seed);
    for _ in 0..horizon {
        sim.round()?;
    }
    Ok(sim.regret)
}

/// Bandits sharing `k` and `gap`, one per environment seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditFamily {
    pub k: usize,
    pub gap: f64,
    pub env_seeds: Vec<u64>,
}

impl BanditFamily {
    pub fn instances(&self) -> Result<Vec<BernoulliBandit>> {
        self.env_seeds
            .iter()
            .map(|&s| BernoulliBandit::sample(self.k, self.gap, s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub eta: f64,
    pub mean_final_regret: f64,
    pub final_regrets: Vec<f64>,
}

/// Lowest mean final regret; ties go to the smaller η.
pub fn best_grid_point(table: &[GridPoint]) -> Option<&GridPoint> {
    table.iter().min_by(|a, b| {
        a.mean_final_regret
            .total_cmp(&b.mean_final_regret)
            .then(a.eta.total_cmp(&b.eta))
    })
}

/// Pick the grid point with the lowest mean final regret over environment seeds; ties
/// go to the smaller η.
pub fn grid_search_eta(
    family: &BanditFamily,
    algorithm: Algorithm,
    grid: &[f64],
    horizon: usize,
    agent_seed: u64,
    exec: Exec,
) -> Result<(f64, Vec<GridPoint>)> {
    if grid.is_empty() {
        return Err(Error::invalid("η grid must be non-empty"));
    }
    if family.env_seeds.is_empty() {
        return Err(Error::invalid("at least one environment seed is required"));
    }
    let bandits = family.instances()?;
    let cells: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&eta| (0..bandits.len()).map(move |i| (eta, i)))
        .collect();
    let results = exec.map(&cells, |&(eta, i)| final_regret(&bandits[i], algorithm, eta, horizon, agent_seed));
    let mut results = results.into_iter();
    let mut table = Vec::with_capacity(grid.len());
    for &eta in grid {
        let final_regrets = results.by_ref().take(bandits.len()).collect::<Result<Vec<_>>>()?;
        let mean_final_regret = final_regrets.iter().sum::<f64>() / final_regrets.len() as f64;
        table.push(GridPoint { eta, mean_final_regret, final_regrets });
    }
    let best = best_grid_point(&table).expect("grid is non-empty");
    Ok((best.eta, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_arithmetic() {
        assert_eq!(iw_reward_estimate(&[0.5, 0.5], 0, 1.0).unwrap(), vec![2.0, 0.0]);
        assert_eq!(iw_reward_estimate(&[0.5, 0.5], 0, 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(lb_iw_loss_estimate(&[0.5, 0.5], 0, 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(lb_iw_loss_estimate(&[0.5, 0.5], 0, 0.0).unwrap(), vec![2.0, 0.0]);
        assert!(iw_reward_estimate(&[1.0, 0.0], 1, 1.0).is_err());
    }

    #[test]
    fn update_arithmetic() {
        let p = exp3_step(&[0.5, 0.5], &[2.0, 0.0], 0.005, Exp3Variant::Gain).unwrap();
        let e = 0.01f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.502500).abs() < 1e-6);
        let p = sexp3_step(&[0.5, 0.5], &[2.0, 0.0], 0.005).unwrap();
        assert!((p[0] - 0.505 / 1.005).abs() < 1e-15);
        assert!((p[0] - 0.502488).abs() < 1e-6);
        assert_eq!(sexp3_step(&[0.5, 0.5], &[0.0, 0.0], 0.3).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn all_clamped_is_step_size_error() {
        let err = sexp3_step(&[0.5, 0.5], &[-10.0, -10.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::StepSize(_)));
    }

    #[test]
    fn one_arm_has_no_regret() {
        let bandit = BernoulliBandit::sample(1, 0.5, 3).unwrap();
        let trace = run_bandit(&bandit, Algorithm::Sexp3, 0.5, 100, 0).unwrap();
        assert!(trace.regret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn fast_path_matches_trace() {
        let bandit = BernoulliBandit::sample(5, 0.5, 11).unwrap();
        for alg in Algorithm::ALL {
            let trace = run_bandit(&bandit, alg, 0.05, 500, 2).unwrap();
            assert_eq!(trace.final_regret(), final_regret(&bandit, alg, 0.05, 500, 2).unwrap());
            assert!(trace.regret.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn single_point_grid() {
        let family = BanditFamily { k: 2, gap: 0.5, env_seeds: vec![0, 1] };
        let (eta, table) =
            grid_search_eta(&family, Algorithm::Iwexp3, &[0.05], 50, 0, Exec::Sequential).unwrap();
        assert_eq!(eta, 0.05);
        assert_eq!(table.len(), 1);
    }
}
