//! Likelihood models and the rescaled acceptance test.

use std::marker::PhantomData;

use nalgebra::DVector;

use crate::error::{FilterError, Result};

/// Evidence-conditional likelihood `P(E | x)` together with its scale `κ_E`.
///
/// Acceptance uses `min(P(E|x)/κ_E, 1)`. When `κ_E` is below
/// `max_x P(E|x)` the ratio is clipped and sampling becomes approximate.
pub trait Likelihood<H: ?Sized = DVector<f64>> {
    type Evidence;

    /// Must be deterministic for a fixed `(evidence, hypothesis)`.
    fn evaluate(&self, evidence: &Self::Evidence, hypothesis: &H) -> f64;

    fn kappa(&self, _evidence: &Self::Evidence) -> f64 {
        1.0
    }
}

impl<H: ?Sized, L: Likelihood<H>> Likelihood<H> for &L {
    type Evidence = L::Evidence;

    fn evaluate(&self, evidence: &Self::Evidence, hypothesis: &H) -> f64 {
        (**self).evaluate(evidence, hypothesis)
    }

    fn kappa(&self, evidence: &Self::Evidence) -> f64 {
        (**self).kappa(evidence)
    }
}

/// Adapts a closure into a [`Likelihood`] with a fixed scale.
pub struct FnLikelihood<E, F> {
    f: F,
    kappa: f64,
    _evidence: PhantomData<fn(&E)>,
}

impl<E, F> FnLikelihood<E, F> {
    pub fn new(f: F) -> Self {
        Self::with_kappa(f, 1.0)
    }

    pub fn with_kappa(f: F, kappa: f64) -> Self {
        Self { f, kappa, _evidence: PhantomData }
    }
}

impl<E, H: ?Sized, F: Fn(&E, &H) -> f64> Likelihood<H> for FnLikelihood<E, F> {
    type Evidence = E;

    fn evaluate(&self, evidence: &E, hypothesis: &H) -> f64 {
        (self.f)(evidence, hypothesis)
    }

    fn kappa(&self, _evidence: &E) -> f64 {
        self.kappa
    }
}

pub(crate) fn check_kappa(kappa: f64) -> Result<f64> {
    if kappa > 0.0 && kappa <= 1.0 {
        Ok(kappa)
    } else {
        Err(FilterError::InvalidKappa(kappa))
    }
}

/// Outcome of evaluating the rescaled likelihood over an evidence array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceProbability {
    /// `∏ min(P(E|x)/κ_E, 1)`
    pub probability: f64,
    /// Whether any factor had `P(E|x)/κ_E > 1`.
    pub clipped: bool,
}

/// Evaluates `∏_E min(P(E|x)/κ_E, 1)`.
///
/// Every factor is evaluated (no short-circuit on zero) so that clipping is
/// always detected.
pub fn acceptance_probability<H, L>(
    hypothesis: &H,
    evidence: &[L::Evidence],
    likelihood: &L,
) -> Result<AcceptanceProbability>
where
    H: ?Sized,
    L: Likelihood<H>,
{
    let mut probability = 1.0;
    let mut clipped = false;
    for e in evidence {
        let value = likelihood.evaluate(e, hypothesis);
        if !value.is_finite() || value < 0.0 {
            return Err(FilterError::InvalidLikelihood(value));
        }
        let ratio = value / check_kappa(likelihood.kappa(e))?;
        if ratio > 1.0 {
            clipped = true;
        }
        probability *= ratio.min(1.0);
    }
    Ok(AcceptanceProbability { probability, clipped })
}

/// Accepts `hypothesis` when the rescaled likelihood product is at least `u`.
///
/// A zero product is never accepted, even for `u = 0`.
pub fn accept_sample<H, L>(hypothesis: &H, evidence: &[L::Evidence], likelihood: &L, u: f64) -> Result<bool>
where
    H: ?Sized,
    L: Likelihood<H>,
{
    let p = acceptance_probability(hypothesis, evidence, likelihood)?.probability;
    Ok(p > 0.0 && p >= u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(value: f64, kappa: f64) -> impl Likelihood<f64, Evidence = ()> {
        FnLikelihood::with_kappa(move |_: &(), _: &f64| value, kappa)
    }

    #[test]
    fn clipped_ratio_always_accepts() {
        let lik = constant(0.85, 0.5);
        assert!(accept_sample(&0.0, &[()], &lik, 0.999).unwrap());
        let p = acceptance_probability(&0.0, &[()], &lik).unwrap();
        assert!(p.clipped);
        assert_eq!(p.probability, 1.0);
    }

    #[test]
    fn zero_likelihood_rejects() {
        let lik = constant(0.0, 1.0);
        assert!(!accept_sample(&0.0, &[()], &lik, 1e-9).unwrap());
        assert!(!accept_sample(&0.0, &[()], &lik, 0.0).unwrap());
    }

    #[test]
    fn product_over_evidence() {
        let lik = constant(0.5, 1.0);
        assert!(accept_sample(&0.0, &[(), ()], &lik, 0.24).unwrap());
        assert!(!accept_sample(&0.0, &[(), ()], &lik, 0.26).unwrap());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert_eq!(
            accept_sample(&0.0, &[()], &constant(-0.1, 1.0), 0.5).unwrap_err(),
            FilterError::InvalidLikelihood(-0.1)
        );
        assert!(matches!(
            accept_sample(&0.0, &[()], &constant(f64::NAN, 1.0), 0.5),
            Err(FilterError::InvalidLikelihood(_))
        ));
        assert_eq!(accept_sample(&0.0, &[()], &constant(0.5, 0.0), 0.5).unwrap_err(), FilterError::InvalidKappa(0.0));
    }
}
