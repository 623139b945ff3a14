//! Exact surrogate maximisers for tabular policies.

use super::{AdvantageCenter, Representation, SurrogateContext};
use crate::mdp::{DirectPolicy, Table};
use crate::mirror::MirrorKind;
use crate::{Error, Result};

/// Natural policy gradient step `p' ∝ p · exp(η C)` (direct representation, negative
/// entropy). Q- and A-weighting give the same policy since `exp(−ηV(s))` cancels.
pub fn closed_form_npg(ctx: &SurrogateContext<'_>) -> Result<DirectPolicy> {
    if ctx.representation() != Representation::Direct || ctx.mirror() != MirrorKind::NegativeEntropy {
        return Err(Error::Configuration(
            "closed-form NPG needs the direct representation with negative entropy".into(),
        ));
    }
    let eta = ctx.eta();
    if !eta.is_finite() {
        return Err(Error::StepSize("closed-form NPG needs a finite η".into()));
    }
    let p_t = ctx.frozen().probs();
    let weights = match ctx.center() {
        AdvantageCenter::UseQ => &ctx.eval().q,
        AdvantageCenter::UseA => &ctx.eval().adv,
    };
    let (ns, na) = p_t.shape();
    let mut out = Table::zeros(ns, na);
    for s in 0..ns {
        let top = (0..na)
            .filter(|&a| p_t[(s, a)] > 0.0)
            .map(|a| eta * weights[(s, a)])
            .fold(f64::NEG_INFINITY, f64::max);
        for a in 0..na {
            if p_t[(s, a)] > 0.0 {
                out[(s, a)] = p_t[(s, a)] * (eta * weights[(s, a)] - top).exp();
            }
        }
        normalize_row(&mut out, s)?;
    }
    DirectPolicy::new(out)
}

/// Softmax/exponential-map step `p' ∝ p · max(1 + ηA, 0)`.
///
/// Factors clamp at zero, so large η can remove actions for good. When nothing clamps the
/// raw row already sums to one because `Σ_a p A = 0`.
pub fn closed_form_softmax_exp(ctx: &SurrogateContext<'_>) -> Result<DirectPolicy> {
    if ctx.representation() != Representation::Softmax {
        return Err(Error::Configuration(
            "closed-form exponential-map update needs the softmax representation".into(),
        ));
    }
    let eta = ctx.eta();
    if !eta.is_finite() {
        return Err(Error::StepSize("closed-form update needs a finite η".into()));
    }
    let p_t = ctx.frozen().probs();
    let adv = &ctx.eval().adv;
    let (ns, na) = p_t.shape();
    let mut out = Table::from_fn(ns, na, |s, a| p_t[(s, a)] * (1.0 + eta * adv[(s, a)]).max(0.0));
    for s in 0..ns {
        normalize_row(&mut out, s).map_err(|_| {
            Error::StepSize(format!(
                "every action of state {s} clamps to zero at η = {eta}; reduce the step size"
            ))
        })?;
    }
    DirectPolicy::new(out)
}

fn normalize_row(table: &mut Table, s: usize) -> Result<()> {
    let total: f64 = table.row(s).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!("row {s} cannot be normalised (sum {total})")));
    }
    table.row_mut(s).unscale_mut(total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TabularMdp;
    use nalgebra::DVector;

    /// One state, two self-looping actions; γ = 0 so Q = r and A = r − mean.
    fn bandit(rewards: [f64; 2]) -> TabularMdp {
        TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            Table::from_row_slice(1, 2, &rewards),
            DVector::from_element(1, 1.0),
            0.0,
        )
        .unwrap()
    }

    fn ctx(mdp: &TabularMdp, eta: f64, rep: Representation, center: AdvantageCenter) -> SurrogateContext<'_> {
        let mirror = match rep {
            Representation::Direct => MirrorKind::NegativeEntropy,
            Representation::Softmax => MirrorKind::NormalizedExponential,
        };
        SurrogateContext::new(mdp, DirectPolicy::uniform(1, 2), eta, rep, mirror, center).unwrap()
    }

    #[test]
    fn npg_scalar_example() {
        let mdp = bandit([1.0, 0.0]);
        let p = closed_form_npg(&ctx(&mdp, 1.0, Representation::Direct, AdvantageCenter::UseQ)).unwrap();
        let e = std::f64::consts::E;
        assert!((p.prob(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.prob(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        let pa = closed_form_npg(&ctx(&mdp, 1.0, Representation::Direct, AdvantageCenter::UseA)).unwrap();
        assert!((p.probs() - pa.probs()).amax() < 1e-12);
    }

    #[test]
    fn softmax_exp_examples() {
        // A = (0.5, −0.5)
        let mdp = bandit([1.0, 0.0]);
        let p = closed_form_softmax_exp(&ctx(&mdp, 1.0, Representation::Softmax, AdvantageCenter::UseQ)).unwrap();
        assert!((p.prob(0, 0) - 0.75).abs() < 1e-15);
        let p = closed_form_softmax_exp(&ctx(&mdp, 4.0, Representation::Softmax, AdvantageCenter::UseQ)).unwrap();
        assert_eq!((p.prob(0, 0), p.prob(0, 1)), (1.0, 0.0));
    }

    #[test]
    fn zero_advantage_is_fixed_point() {
        let mdp = bandit([0.4, 0.4]);
        let a = closed_form_npg(&ctx(&mdp, 3.0, Representation::Direct, AdvantageCenter::UseQ)).unwrap();
        let b = closed_form_softmax_exp(&ctx(&mdp, 3.0, Representation::Softmax, AdvantageCenter::UseQ)).unwrap();
        assert_eq!(a, DirectPolicy::uniform(1, 2));
        assert_eq!(b, DirectPolicy::uniform(1, 2));
    }

    #[test]
    fn wrong_representation_is_rejected() {
        let mdp = bandit([1.0, 0.0]);
        assert!(closed_form_npg(&ctx(&mdp, 1.0, Representation::Softmax, AdvantageCenter::UseQ)).is_err());
        assert!(closed_form_softmax_exp(&ctx(&mdp, 1.0, Representation::Direct, AdvantageCenter::UseQ)).is_err());
    }
}
