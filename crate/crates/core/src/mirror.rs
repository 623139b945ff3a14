//! Mirror maps and Bregman divergences.
//!
//! Potentials, per state slice `x`:
//!
//! | kind                    | φ(x)                              | D_φ(x, y)                 |
//! |-------------------------|-----------------------------------|---------------------------|
//! | `SquaredEuclidean`      | ½‖x‖²                             | ½‖x − y‖²                 |
//! | `NegativeEntropy`       | Σ x ln x                          | Σ x ln(x/y) − Σ x + Σ y   |
//! | `NormalizedExponential` | Σ exp(x) / Σ exp(z′)  (anchor z′) | see [`bregman_per_state`] |
//!
//! On the simplex the negative-entropy divergence is the reverse KL `KL(x ‖ y)`. The
//! normalized exponential divergence between logits equals the forward KL between the
//! induced distributions plus `exp(δ) − 1 − δ`, where `δ` is the log-normaliser gap
//! (see [`exp_map_kl_residual`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MirrorKind {
    SquaredEuclidean,
    NegativeEntropy,
    NormalizedExponential,
}

/// A mirror map. The normalized exponential carries an anchor logits table whose row `s`
/// normalises the potential of state `s`.
#[derive(Debug, Clone, PartialEq)]
pub enum MirrorMap {
    SquaredEuclidean,
    NegativeEntropy,
    NormalizedExponential { anchor: Option<DMatrix<f64>> },
}

impl MirrorMap {
    pub fn kind(&self) -> MirrorKind {
        match self {
            MirrorMap::SquaredEuclidean => MirrorKind::SquaredEuclidean,
            MirrorMap::NegativeEntropy => MirrorKind::NegativeEntropy,
            MirrorMap::NormalizedExponential { .. } => MirrorKind::NormalizedExponential,
        }
    }

    /// Normalized exponential map for a single state slice.
    pub fn normalized_exponential(anchor: &[f64]) -> Self {
        MirrorMap::NormalizedExponential {
            anchor: Some(DMatrix::from_row_slice(1, anchor.len(), anchor)),
        }
    }

    fn anchor_row(&self, s: usize) -> Result<Option<Vec<f64>>> {
        match self {
            MirrorMap::NormalizedExponential { anchor: Some(table) } => {
                if s >= table.nrows() {
                    return Err(Error::Configuration(format!(
                        "anchor table has {} rows, state {s} requested",
                        table.nrows()
                    )));
                }
                Ok(Some(table.row(s).iter().copied().collect()))
            }
            MirrorMap::NormalizedExponential { anchor: None } => Err(Error::Configuration(
                "normalized exponential mirror map needs an anchor".into(),
            )),
            _ => Ok(None),
        }
    }
}

/// Positive per-state weights `w(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeights(DVector<f64>);

impl StateWeights {
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if let Some((s, x)) = w.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::Domain(format!("state weight w({s}) = {x} is not positive")));
        }
        Ok(Self(w))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Numerically stable `ln Σ exp(x)`. Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of one logits slice.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// `KL(p ‖ q) = Σ p ln(p/q)` with `0 ln 0 = 0`; `+inf` when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "slices have different lengths ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

fn slice_bregman(kind: MirrorKind, anchor: Option<&[f64]>, x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("Bregman divergence needs finite arguments".into()));
    }
    match kind {
        MirrorKind::SquaredEuclidean => {
            Ok(0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        }
        MirrorKind::NegativeEntropy => {
            if x.iter().chain(y).any(|v| *v <= 0.0) {
                return Err(Error::Domain(
                    "negative entropy is only defined for strictly positive coordinates".into(),
                ));
            }
            Ok(x.iter().zip(y).map(|(a, b)| a * (a / b).ln() - a + b).sum())
        }
        MirrorKind::NormalizedExponential => {
            let anchor = anchor.ok_or_else(|| {
                Error::Configuration("normalized exponential mirror map needs an anchor".into())
            })?;
            check_len(x, anchor)?;
            if anchor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("anchor logits must be finite".into()));
            }
            // Work relative to the anchor normaliser so large logits stay representable.
            let lse_anchor = log_sum_exp(anchor);
            let phi_x = (log_sum_exp(x) - lse_anchor).exp();
            let phi_y = (log_sum_exp(y) - lse_anchor).exp();
            let inner: f64 = y
                .iter()
                .zip(x)
                .map(|(b, a)| (b - lse_anchor).exp() * (a - b))
                .sum();
            Ok(phi_x - phi_y - inner)
        }
    }
}

/// `D_φ(x, y) = φ(x) − φ(y) − ⟨∇φ(y), x − y⟩` on one state slice.
///
/// The normalized exponential map must carry a single-row anchor.
pub fn bregman_per_state(map: &MirrorMap, x: &[f64], y: &[f64]) -> Result<f64> {
    let anchor = map.anchor_row(0)?;
    slice_bregman(map.kind(), anchor.as_deref(), x, y)
}

/// `Σ_s w(s) D_φ(a[s], b[s])`.
pub fn bregman_policy(
    map: &MirrorMap,
    weights: &StateWeights,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<f64> {
    if a.shape() != b.shape() || a.nrows() != weights.0.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?} with {} weights",
            a.shape(),
            b.shape(),
            weights.0.len()
        )));
    }
    let mut total = 0.0;
    for s in 0..a.nrows() {
        let x: Vec<f64> = a.row(s).iter().copied().collect();
        let y: Vec<f64> = b.row(s).iter().copied().collect();
        let anchor = map.anchor_row(s)?;
        total += weights.0[s] * slice_bregman(map.kind(), anchor.as_deref(), &x, &y)?;
    }
    Ok(total)
}

/// The decomposition of the normalized exponential divergence on one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpMapKl {
    /// `D_φ(z, z′)` with the map anchored at `z′`.
    pub bregman: f64,
    /// `KL(p^{z′} ‖ p^{z})`.
    pub forward_kl: f64,
    /// `bregman − forward_kl`.
    pub residual: f64,
    /// `exp(δ) − 1 − δ` with `δ = lse(z) − lse(z′)`; equals `residual` analytically.
    pub normalizer_term: f64,
}

/// Split the exponential-map divergence into forward KL plus the normaliser term.
pub fn exp_map_kl_residual(z: &[f64], z_anchor: &[f64]) -> Result<ExpMapKl> {
    check_len(z, z_anchor)?;
    if z.iter().chain(z_anchor).any(|v| !v.is_finite()) {
        return Err(Error::Domain("logits must be finite".into()));
    }
    let bregman = slice_bregman(MirrorKind::NormalizedExponential, Some(z_anchor), z, z_anchor)?;
    let forward_kl = kl_divergence(&softmax(z_anchor), &softmax(z));
    let delta = log_sum_exp(z) - log_sum_exp(z_anchor);
    Ok(ExpMapKl {
        bregman,
        forward_kl,
        residual: bregman - forward_kl,
        normalizer_term: delta.exp_m1() - delta,
    })
}
