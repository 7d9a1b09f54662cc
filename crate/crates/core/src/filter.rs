//! The rejection filter update.
//!
//! Candidates are drawn from the current Gaussian belief and accepted with
//! probability `∏ min(P(E|x)/κ_E, 1)`. Accepted candidates stream into a
//! [`MomentAccumulator`]; nothing else is stored. The refit Gaussian becomes
//! the belief for the next update.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accumulator::MomentAccumulator;
use crate::error::{FilterError, Result};
use crate::gaussian::{GaussianModel, GaussianSampler};
use crate::likelihood::{acceptance_probability, check_kappa, Likelihood};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RFConfig {
    /// Candidates drawn per update (`m`).
    pub attempts: u64,
    /// Covariance inflation applied when too few candidates are accepted.
    pub recovery: f64,
    pub seed: u64,
}

impl Default for RFConfig {
    fn default() -> Self {
        Self { attempts: 100, recovery: 0.02, seed: 0 }
    }
}

impl RFConfig {
    pub fn new(attempts: u64, recovery: f64, seed: u64) -> Result<Self> {
        let config = Self { attempts, recovery, seed };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts == 0 {
            return Err(FilterError::InvalidConfig("attempts must be at least 1".into()));
        }
        if !(self.recovery >= 0.0 && self.recovery.is_finite()) {
            return Err(FilterError::InvalidConfig(format!(
                "recovery factor must be finite and non-negative, got {}",
                self.recovery
            )));
        }
        Ok(())
    }
}

/// Counters from a batch of rejection-sampling attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptStats {
    pub attempts: u64,
    pub accepted: u64,
    /// Candidates for which some `P(E|x)/κ_E` exceeded one.
    pub clipped: u64,
}

impl AttemptStats {
    pub fn combine(self, other: Self) -> Self {
        Self {
            attempts: self.attempts + other.attempts,
            accepted: self.accepted + other.accepted,
            clipped: self.clipped + other.clipped,
        }
    }
}

/// How far an update strayed from exact rejection sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxRejectionDiagnostics {
    pub acceptance_rate: f64,
    pub clipped_fraction: f64,
    /// `δ` with `Σ_bad (P(E|x) − κ_E) P(x) = δ P(E)`, when the hypothesis
    /// space was enumerable. See [`bad_mass_bound`].
    pub bad_mass_bound: Option<f64>,
}

impl From<AttemptStats> for ApproxRejectionDiagnostics {
    fn from(s: AttemptStats) -> Self {
        let m = s.attempts.max(1) as f64;
        Self { acceptance_rate: s.accepted as f64 / m, clipped_fraction: s.clipped as f64 / m, bad_mass_bound: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub model: GaussianModel,
    pub accepted: u64,
    pub diagnostics: ApproxRejectionDiagnostics,
}

/// Generic rejection-sampling loop.
///
/// For each of `attempts` rounds, draws a hypothesis with `draw`, then one
/// uniform `u`, and hands the hypothesis to `on_accept` when it passes the
/// rescaled likelihood test.
pub fn rejection_sample<H, L, R, D, A>(
    evidence: &[L::Evidence],
    likelihood: &L,
    attempts: u64,
    rng: &mut R,
    mut draw: D,
    mut on_accept: A,
) -> Result<AttemptStats>
where
    L: Likelihood<H>,
    R: Rng + ?Sized,
    D: FnMut(&mut R) -> H,
    A: FnMut(H) -> Result<()>,
{
    let mut stats = AttemptStats { attempts, ..Default::default() };
    for _ in 0..attempts {
        let x = draw(rng);
        let u: f64 = rng.random();
        let p = acceptance_probability(&x, evidence, likelihood)?;
        if p.clipped {
            stats.clipped += 1;
        }
        if p.probability > 0.0 && p.probability >= u {
            stats.accepted += 1;
            on_accept(x)?;
        }
    }
    Ok(stats)
}

/// Runs `attempts` Gaussian candidates through the acceptance test,
/// accumulating accepted ones into `acc`.
pub fn run_attempts<L, R>(
    evidence: &[L::Evidence],
    sampler: &mut GaussianSampler,
    likelihood: &L,
    attempts: u64,
    rng: &mut R,
    acc: &mut MomentAccumulator,
) -> Result<AttemptStats>
where
    L: Likelihood<DVector<f64>>,
    R: Rng + ?Sized,
{
    if sampler.dim() != acc.dim() {
        return Err(FilterError::DimensionMismatch { expected: acc.dim(), found: sampler.dim() });
    }
    rejection_sample(evidence, likelihood, attempts, rng, |r| sampler.sample(r), |x| acc.push(&x))
}

/// One rejection-filter update of `prior` on the evidence array.
pub fn rf_update<L, R>(
    evidence: &[L::Evidence],
    prior: &GaussianModel,
    likelihood: &L,
    config: &RFConfig,
    rng: &mut R,
) -> Result<UpdateOutcome>
where
    L: Likelihood<DVector<f64>>,
    R: Rng + ?Sized,
{
    config.validate()?;
    let mut sampler = prior.sampler()?;
    let mut acc = MomentAccumulator::new(prior.dim());
    let stats = run_attempts(evidence, &mut sampler, likelihood, config.attempts, rng, &mut acc)?;
    Ok(UpdateOutcome {
        model: acc.finalize(prior, config.recovery),
        accepted: stats.accepted,
        diagnostics: stats.into(),
    })
}

/// [`rf_update`] with a generator seeded from `config.seed`.
pub fn rf_update_seeded<L>(
    evidence: &[L::Evidence],
    prior: &GaussianModel,
    likelihood: &L,
    config: &RFConfig,
) -> Result<UpdateOutcome>
where
    L: Likelihood<DVector<f64>>,
{
    rf_update(evidence, prior, likelihood, config, &mut rng::seeded(config.seed))
}

/// `δ = Σ_{x ∈ bad} (P(E|x) − κ_E) P(x) / P(E)` over an enumerable support
/// of `(hypothesis, prior probability)` pairs, where `bad = {x : P(E|x) > κ_E}`.
pub fn bad_mass_bound<H, L>(support: &[(H, f64)], evidence: &L::Evidence, likelihood: &L) -> Result<f64>
where
    L: Likelihood<H>,
{
    let kappa = check_kappa(likelihood.kappa(evidence))?;
    let mut total = 0.0;
    let mut excess = 0.0;
    for (x, prior) in support {
        let value = likelihood.evaluate(evidence, x);
        if !value.is_finite() || value < 0.0 {
            return Err(FilterError::InvalidLikelihood(value));
        }
        total += value * prior;
        if value > kappa {
            excess += (value - kappa) * prior;
        }
    }
    if total > 0.0 {
        Ok(excess / total)
    } else {
        Ok(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::FnLikelihood;
    use nalgebra::DMatrix;

    fn config(attempts: u64, recovery: f64) -> RFConfig {
        RFConfig::new(attempts, recovery, 0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(RFConfig::new(0, 0.0, 0).is_err());
        assert!(RFConfig::new(1, -0.1, 0).is_err());
        assert!(RFConfig::new(1, 0.0, 0).is_ok());
    }

    #[test]
    fn accept_all_reproduces_prior_draw_moments() {
        let prior = GaussianModel::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]),
        )
        .unwrap();
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| 1.0);
        let out = rf_update(&[()], &prior, &lik, &config(500, 0.02), &mut rng::seeded(4)).unwrap();
        assert_eq!(out.accepted, 500);
        assert_eq!(out.diagnostics.acceptance_rate, 1.0);

        // replay the same stream: x then u per candidate
        let mut r = rng::seeded(4);
        let mut sampler = prior.sampler().unwrap();
        let mut draws = Vec::new();
        for _ in 0..500 {
            draws.push(sampler.sample(&mut r));
            let _: f64 = r.random();
        }
        let n = draws.len() as f64;
        let mean = draws.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
        let cov = draws.iter().fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mean) * (x - &mean).transpose()) / (n - 1.0);
        assert!((out.model.mean() - mean).amax() < 1e-12);
        assert!((out.model.covariance() - cov).amax() < 1e-12);
    }

    #[test]
    fn reject_all_takes_recovery_branch() {
        let prior = GaussianModel::new(DVector::from_vec(vec![3.0, 1.0]), DMatrix::identity(2, 2) * 0.7).unwrap();
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| 0.0);
        let out = rf_update(&[()], &prior, &lik, &config(200, 0.02), &mut rng::seeded(5)).unwrap();
        assert_eq!(out.accepted, 0);
        assert_eq!(out.model.mean(), prior.mean());
        assert!((out.model.covariance() - prior.covariance() * 1.02).amax() < 1e-15);
    }

    #[test]
    fn single_acceptance_keeps_location_and_widens() {
        let prior = GaussianModel::scalar(0.0, 1.0).unwrap();
        // accept only the first candidate
        let seen = std::cell::Cell::new(0);
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| {
            seen.set(seen.get() + 1);
            if seen.get() == 1 {
                1.0
            } else {
                0.0
            }
        });
        let out = rf_update(&[()], &prior, &lik, &config(10, 0.5), &mut rng::seeded(6)).unwrap();
        assert_eq!(out.accepted, 1);
        assert_eq!(out.model.covariance()[(0, 0)], 1.5);
        let first = prior.sampler().unwrap().sample(&mut rng::seeded(6));
        assert_eq!(out.model.mean(), &first);
    }

    #[test]
    fn invalid_likelihood_propagates() {
        let prior = GaussianModel::scalar(0.0, 1.0).unwrap();
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| f64::INFINITY);
        assert!(matches!(
            rf_update(&[()], &prior, &lik, &config(10, 0.0), &mut rng::seeded(0)),
            Err(FilterError::InvalidLikelihood(_))
        ));
    }

    #[test]
    fn clipping_is_reported() {
        let prior = GaussianModel::scalar(0.0, 1.0).unwrap();
        let lik = FnLikelihood::with_kappa(|_: &(), x: &DVector<f64>| if x[0] > 0.0 { 0.9 } else { 0.1 }, 0.5);
        let out = rf_update(&[()], &prior, &lik, &config(10_000, 0.0), &mut rng::seeded(8)).unwrap();
        let f = out.diagnostics.clipped_fraction;
        assert!((f - 0.5).abs() < 0.03, "clipped fraction {f}");
        assert!((0.0..=1.0).contains(&out.diagnostics.acceptance_rate));
    }

    #[test]
    fn bad_mass_on_enumerable_support() {
        // P(E|x) = 0.2, 0.8 with equal prior, κ = 0.5:
        // P(E) = 0.5, excess = 0.3·0.5 = 0.15, δ = 0.3
        let support = [(0.0, 0.5), (1.0, 0.5)];
        let lik = FnLikelihood::with_kappa(|_: &(), x: &f64| if *x > 0.5 { 0.8 } else { 0.2 }, 0.5);
        let delta = bad_mass_bound(&support, &(), &lik).unwrap();
        assert!((delta - 0.3).abs() < 1e-15);
        let exact = FnLikelihood::new(|_: &(), x: &f64| if *x > 0.5 { 0.8 } else { 0.2 });
        assert_eq!(bad_mass_bound(&support, &(), &exact).unwrap(), 0.0);
    }
}
