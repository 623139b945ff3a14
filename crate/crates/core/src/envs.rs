//! Environment constructors: the Cliff gridworld and seeded random MDPs.

use nalgebra::DVector;
use rand_distr::{Distribution, Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::mdp::{DirectPolicy, Table, TabularMdp};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Grid moves in action-index order.
pub const CLIFF_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];
const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Gridworld with a cliff along the bottom row. Cells are `(row, col)` with row 0 at the
/// top; state index is `row * width + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliffSpec {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub cliff: Vec<(usize, usize)>,
    pub cliff_penalty: f64,
    pub step_reward: f64,
    /// Received on every step spent in the absorbing goal.
    pub goal_reward: f64,
    pub discount: f64,
    /// Probability of replacing the chosen move with a uniformly random one.
    pub slip_prob: f64,
}

impl Default for CliffSpec {
    fn default() -> Self {
        Self {
            width: 7,
            height: 7,
            start: (6, 0),
            goal: (6, 6),
            cliff: (1..6).map(|c| (6, c)).collect(),
            cliff_penalty: -100.0,
            step_reward: 0.0,
            goal_reward: 1.0,
            discount: 0.9,
            slip_prob: 0.0,
        }
    }
}

impl CliffSpec {
    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (r, c): (usize, usize)) -> usize {
        r * self.width + c
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.width, s % self.width)
    }

    pub fn is_cliff(&self, cell: (usize, usize)) -> bool {
        self.cliff.contains(&cell)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("cliff grid must be non-empty"));
        }
        let inside = |(r, c): (usize, usize)| r < self.height && c < self.width;
        for (name, cell) in [("start", self.start), ("goal", self.goal)] {
            if !inside(cell) {
                return Err(Error::invalid(format!("{name} {cell:?} lies outside the grid")));
            }
            if self.is_cliff(cell) {
                return Err(Error::invalid(format!("{name} {cell:?} is a cliff cell")));
            }
        }
        if self.start == self.goal {
            return Err(Error::invalid("start and goal coincide"));
        }
        if let Some(cell) = self.cliff.iter().find(|&&c| !inside(c)) {
            return Err(Error::invalid(format!("cliff cell {cell:?} lies outside the grid")));
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return Err(Error::invalid(format!("slip_prob must lie in [0, 1], got {}", self.slip_prob)));
        }
        if ![self.cliff_penalty, self.step_reward, self.goal_reward].iter().all(|r| r.is_finite()) {
            return Err(Error::invalid("cliff rewards must be finite"));
        }
        Ok(())
    }

    /// Landing state and reward of a deterministic move from a non-terminal cell.
    fn step(&self, (r, c): (usize, usize), action: usize) -> (usize, f64) {
        let (dr, dc) = MOVES[action];
        let nr = r as i64 + dr;
        let nc = c as i64 + dc;
        let next = if nr < 0 || nc < 0 || nr >= self.height as i64 || nc >= self.width as i64 {
            (r, c)
        } else {
            (nr as usize, nc as usize)
        };
        if self.is_cliff(next) {
            (self.index(self.start), self.cliff_penalty)
        } else {
            (self.index(next), self.step_reward)
        }
    }
}

/// Build the Cliff MDP. Entering a cliff cell pays the penalty and teleports to the start;
/// the goal is absorbing and pays `goal_reward` on every step. Cliff cells themselves are
/// unreachable and send every action back to the start.
pub fn build_cliff_mdp(spec: &CliffSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let n = spec.n_states();
    let na = MOVES.len();
    let start = spec.index(spec.start);
    let goal = spec.index(spec.goal);
    let mut transitions = vec![0.0; n * na * n];
    let mut rewards = Table::zeros(n, na);

    for s in 0..n {
        let cell = spec.cell(s);
        for a in 0..na {
            let row = &mut transitions[(s * na + a) * n..(s * na + a + 1) * n];
            if s == goal {
                row[goal] = 1.0;
                rewards[(s, a)] = spec.goal_reward;
                continue;
            }
            if spec.is_cliff(cell) {
                row[start] = 1.0;
                continue;
            }
            let mut expected = 0.0;
            for b in 0..na {
                let w = if b == a { 1.0 - spec.slip_prob } else { 0.0 } + spec.slip_prob / na as f64;
                if w == 0.0 {
                    continue;
                }
                let (next, r) = spec.step(cell, b);
                row[next] += w;
                expected += w * r;
            }
            rewards[(s, a)] = expected;
        }
    }
    let mut initial = DVector::zeros(n);
    initial[start] = 1.0;
    TabularMdp::new(n, na, transitions, rewards, initial, spec.discount)
}

/// Deterministic policy that climbs to the top row, crosses it, and descends the last
/// column: the route furthest from a bottom-row cliff.
pub fn safe_path_policy(spec: &CliffSpec) -> Result<DirectPolicy> {
    spec.validate()?;
    let last_col = spec.width - 1;
    let actions: Vec<usize> = (0..spec.n_states())
        .map(|s| {
            let (r, c) = spec.cell(s);
            if c == last_col {
                1
            } else if r == 0 {
                3
            } else {
                0
            }
        })
        .collect();
    DirectPolicy::deterministic(&actions, MOVES.len())
}

/// Random MDP with Dirichlet(1, …, 1) transition rows, i.i.d. uniform rewards in
/// `reward_range` and a uniform initial distribution.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    reward_range: (f64, f64),
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::invalid("random MDP sizes must be at least 1"));
    }
    let (lo, hi) = reward_range;
    let rewards_dist = Uniform::new_inclusive(lo, hi)
        .map_err(|e| Error::invalid(format!("reward range ({lo}, {hi}): {e}")))?;
    let mut rng = substream(seed, Stream::MdpInstance);

    let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = row.iter().sum();
        transitions.extend(row.iter().map(|x| x / total));
    }
    let rewards = Table::from_fn(n_states, n_actions, |_, _| rewards_dist.sample(&mut rng));
    let initial = DVector::from_element(n_states, 1.0 / n_states as f64);
    TabularMdp::new(n_states, n_actions, transitions, rewards, initial, gamma)
}
