//! Streaming Bayes factors from acceptance counts.
//!
//! `N_a` in each update is binomial with mean `m·P(E)`, so a running sum of
//! hedged log acceptance fractions estimates the log total likelihood of the
//! model being filtered. Two such registers fed from the same evidence give
//! a Bayes factor.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::filter::{rf_update, RFConfig};
use crate::gaussian::GaussianModel;
use crate::likelihood::Likelihood;
use crate::rng;

pub const DEFAULT_HEDGING: f64 = 0.5;

/// Hedged log total-likelihood `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihoodRegister {
    value: f64,
    hedging: f64,
    updates_seen: u64,
}

impl Default for LogLikelihoodRegister {
    fn default() -> Self {
        Self::new(DEFAULT_HEDGING).expect("default hedging is positive")
    }
}

impl LogLikelihoodRegister {
    pub fn new(hedging: f64) -> Result<Self> {
        if !(hedging > 0.0 && hedging.is_finite()) {
            return Err(FilterError::InvalidConfig(format!("hedging must be > 0, got {hedging}")));
        }
        Ok(Self { value: 0.0, hedging, updates_seen: 0 })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn hedging(&self) -> f64 {
        self.hedging
    }

    pub fn updates_seen(&self) -> u64 {
        self.updates_seen
    }

    /// `ln((N_a + β)/(m + 2β))`
    pub fn increment(&self, accepted: u64, attempts: u64) -> Result<f64> {
        if attempts == 0 {
            return Err(FilterError::InvalidConfig("attempts must be at least 1".into()));
        }
        if accepted > attempts {
            return Err(FilterError::CountExceedsAttempts { accepted, attempts });
        }
        let b = self.hedging;
        Ok(((accepted as f64 + b) / (attempts as f64 + 2.0 * b)).ln())
    }

    pub fn update(&mut self, accepted: u64, attempts: u64) -> Result<()> {
        self.value += self.increment(accepted, attempts)?;
        self.updates_seen += 1;
        Ok(())
    }
}

/// Estimated Bayes factor `K̂ = exp(ℓ_A − ℓ_B)`; values above one favour `a`.
pub fn bayes_factor(a: &LogLikelihoodRegister, b: &LogLikelihoodRegister) -> Result<f64> {
    if a.updates_seen != b.updates_seen {
        return Err(FilterError::IncomparableRegisters(a.updates_seen, b.updates_seen));
    }
    Ok((a.value - b.value).exp())
}

/// Per-update output of [`run_two_models`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionRow {
    pub k: u64,
    pub log_likelihood_a: f64,
    pub log_likelihood_b: f64,
    pub bayes_factor: f64,
}

/// Filters two models side by side on a shared evidence stream and tracks
/// their registers. Each model keeps its own belief and random stream.
pub fn run_two_models<LA, LB, R>(
    evidence: &[LA::Evidence],
    model_a: (&LA, GaussianModel),
    model_b: (&LB, GaussianModel),
    config: &RFConfig,
    hedging: f64,
    rng: &mut R,
) -> Result<Vec<ModelSelectionRow>>
where
    LA: Likelihood<DVector<f64>>,
    LB: Likelihood<DVector<f64>, Evidence = LA::Evidence>,
    R: Rng + ?Sized,
{
    let (lik_a, mut belief_a) = model_a;
    let (lik_b, mut belief_b) = model_b;
    let mut reg_a = LogLikelihoodRegister::new(hedging)?;
    let mut reg_b = LogLikelihoodRegister::new(hedging)?;
    let mut rng_a = rng::seeded(rng.random());
    let mut rng_b = rng::seeded(rng.random());
    let mut rows = Vec::with_capacity(evidence.len());
    for (k, e) in evidence.iter().enumerate() {
        let ua = rf_update(std::slice::from_ref(e), &belief_a, lik_a, config, &mut rng_a)?;
        let ub = rf_update(std::slice::from_ref(e), &belief_b, lik_b, config, &mut rng_b)?;
        reg_a.update(ua.accepted, config.attempts)?;
        reg_b.update(ub.accepted, config.attempts)?;
        belief_a = ua.model;
        belief_b = ub.model;
        rows.push(ModelSelectionRow {
            k: k as u64 + 1,
            log_likelihood_a: reg_a.value(),
            log_likelihood_b: reg_b.value(),
            bayes_factor: bayes_factor(&reg_a, &reg_b)?,
        });
    }
    Ok(rows)
}

/// Coin-flip demonstration instance.
///
/// Outcomes are Bernoulli with an unknown bias `x`. Model A allows any bias,
/// `P(1|x) = clamp(x, 0, 1)`; model B caps it at one half,
/// `P(1|x) = min(clamp(x, 0, 1), 1/2)`. Both start from `N(1/2, 0.2²)`.
pub mod coin {
    use super::*;

    /// Bias used to generate evidence from model A.
    pub const TRUE_BIAS: f64 = 0.8;

    pub struct CoinModel {
        pub cap: f64,
    }

    impl Likelihood for CoinModel {
        type Evidence = u8;

        fn evaluate(&self, outcome: &u8, x: &DVector<f64>) -> f64 {
            let p = x[0].clamp(0.0, 1.0).min(self.cap);
            if *outcome == 1 {
                p
            } else {
                1.0 - p
            }
        }
    }

    pub fn model_a() -> CoinModel {
        CoinModel { cap: 1.0 }
    }

    pub fn model_b() -> CoinModel {
        CoinModel { cap: 0.5 }
    }

    pub fn prior() -> GaussianModel {
        GaussianModel::scalar(0.5, 0.04).expect("valid prior")
    }

    pub fn flips<R: Rng + ?Sized>(n: usize, bias: f64, rng: &mut R) -> Vec<u8> {
        (0..n).map(|_| u8::from(rng.random::<f64>() < bias)).collect()
    }

    /// One seeded trial: evidence from model A, both models filtered.
    pub fn trial(n_updates: usize, config: &RFConfig, hedging: f64, seed: u64) -> Result<Vec<ModelSelectionRow>> {
        let mut data_rng = rng::stream(seed, 0);
        let evidence = flips(n_updates, TRUE_BIAS, &mut data_rng);
        let mut filter_rng = rng::stream(seed, 1);
        run_two_models(&evidence, (&model_a(), prior()), (&model_b(), prior()), config, hedging, &mut filter_rng)
    }
}
