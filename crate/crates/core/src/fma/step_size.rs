//! Functional step sizes that make the surrogate a lower bound of `J` for rewards in
//! `[0, 1]`.

use super::DEFAULT_ETA_CAP;
use crate::{Error, Result};

/// `(1 − γ)³ / (2γ|A|)` for the direct representation with negative entropy, capped at
/// [`DEFAULT_ETA_CAP`].
pub fn step_size_direct(gamma: f64, n_actions: usize) -> Result<f64> {
    step_size_direct_capped(gamma, n_actions, DEFAULT_ETA_CAP)
}

pub fn step_size_direct_capped(gamma: f64, n_actions: usize, cap: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} is outside [0, 1)")));
    }
    if n_actions == 0 {
        return Err(Error::invalid("need at least one action"));
    }
    if gamma == 0.0 {
        return Ok(cap);
    }
    let bound = (1.0 - gamma).powi(3) / (2.0 * gamma * n_actions as f64);
    Ok(bound.min(cap))
}

/// `1 − γ` for the softmax representation with the exponential map.
pub fn step_size_softmax(gamma: f64) -> Result<f64> {
    step_size_softmax_range(gamma, 0.0, 1.0)
}

/// `(1 − γ) / (r_max − r_min)` for rewards in `[r_min, r_max]`.
pub fn step_size_softmax_range(gamma: f64, r_min: f64, r_max: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} is outside [0, 1)")));
    }
    if !(r_max > r_min) || !r_min.is_finite() || !r_max.is_finite() {
        return Err(Error::invalid(format!("empty reward range [{r_min}, {r_max}]")));
    }
    Ok((1.0 - gamma) / (r_max - r_min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_formula() {
        let eta = step_size_direct(0.9, 4).unwrap();
        assert!((eta - 0.001 / 7.2).abs() < 1e-15);
        assert!((step_size_direct(0.5, 1).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(step_size_direct(0.0, 3).unwrap(), DEFAULT_ETA_CAP);
        assert_eq!(step_size_direct(1e-12, 3).unwrap(), DEFAULT_ETA_CAP);
        assert_eq!(step_size_direct_capped(0.0, 3, 5.0).unwrap(), 5.0);
    }

    #[test]
    fn softmax_formula() {
        assert!((step_size_softmax(0.99).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(step_size_softmax(0.0).unwrap(), 1.0);
        assert_eq!(
            step_size_softmax_range(0.7, 0.0, 1.0).unwrap(),
            step_size_softmax(0.7).unwrap()
        );
        assert!((step_size_softmax_range(0.5, -1.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(step_size_softmax_range(0.5, 1.0, 1.0).is_err());
    }
}
