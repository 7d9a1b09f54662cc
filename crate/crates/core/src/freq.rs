//! Tracking a drifting oscillator frequency.
//!
//! The hidden frequency `x(k)` follows a Gaussian random walk. Each update
//! designs an experiment `(x₋, t)` with the particle guess heuristic, draws a
//! binary outcome with `Pr(1) = cos²((x − x₋)·t/2)`, and folds it into the
//! Gaussian belief with one rejection-filter update preceded by a diffusion
//! step.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{diffuse, DiffusionKernel};
use crate::error::{FilterError, Result};
use crate::filter::{rf_update, RFConfig};
use crate::gaussian::GaussianModel;
use crate::likelihood::{check_kappa, Likelihood};
use crate::rng;

/// Per-step standard deviation of the true frequency's random walk.
pub const WALK_SIGMA: f64 = PI / 120.0;

/// Column header of the tracking CSV.
pub const CSV_HEADER: &str = "trial,k,x_minus,t,outcome,n_accepted,mean,trace_cov,truth,loss";

/// `cos²((x − x₋)·t/2)` for outcome 1, its complement for outcome 0.
pub fn freq_likelihood(outcome: u8, x: f64, x_minus: f64, t: f64) -> f64 {
    let p1 = ((x - x_minus) * t / 2.0).cos().powi(2);
    if outcome == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// Experiment settings chosen for one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub x_minus: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqLikelihood {
    pub design: Design,
    pub kappa: f64,
}

impl FreqLikelihood {
    pub fn new(design: Design, kappa: f64) -> Result<Self> {
        if !(design.t > 0.0) {
            return Err(FilterError::InvalidConfig(format!("evolution time must be > 0, got {}", design.t)));
        }
        check_kappa(kappa)?;
        Ok(Self { design, kappa })
    }
}

impl Likelihood for FreqLikelihood {
    type Evidence = u8;

    fn evaluate(&self, outcome: &u8, x: &DVector<f64>) -> f64 {
        freq_likelihood(*outcome, x[0], self.design.x_minus, self.design.t)
    }

    fn kappa(&self, _outcome: &u8) -> f64 {
        self.kappa
    }
}

/// Particle guess heuristic: `x₋` drawn from the belief, `t = 1/√tr Σ`.
pub fn pgh_design<R: Rng + ?Sized>(model: &GaussianModel, rng: &mut R) -> Result<Design> {
    let trace = model.trace();
    if !(trace > 0.0) {
        return Err(FilterError::DegenerateModel);
    }
    let x_minus = model.sampler()?.sample(rng)[0];
    Ok(Design { x_minus, t: 1.0 / trace.sqrt() })
}

/// Random-walk ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftingTruth {
    pub current: f64,
    pub step_sigma: f64,
}

impl DriftingTruth {
    /// Starts from `x(0) ~ Uniform(0, π/2)`.
    pub fn new<R: Rng + ?Sized>(step_sigma: f64, rng: &mut R) -> Self {
        Self { current: rng.random_range(0.0..PI / 2.0), step_sigma }
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.step_sigma > 0.0 {
            let step = Normal::new(0.0, self.step_sigma).expect("finite sigma");
            self.current += step.sample(rng);
        }
    }
}

/// Bernoulli outcome with success probability `cos²((x − x₋)·t/2)`.
pub fn simulate_outcome<R: Rng + ?Sized>(truth: f64, design: Design, rng: &mut R) -> u8 {
    let p = freq_likelihood(1, truth, design.x_minus, design.t);
    u8::from(rng.random::<f64>() < p)
}

/// Prior matched to `Uniform(0, π/2)`: mean `π/4`, variance `(π/4)²/3`.
pub fn initial_model() -> GaussianModel {
    GaussianModel::scalar(PI / 4.0, (PI / 4.0).powi(2) / 3.0).expect("valid prior")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub updates: usize,
    pub attempts: u64,
    pub recovery: f64,
    pub kappa: f64,
    /// Diffusion rate applied before each update.
    pub eta: f64,
    /// Standard deviation of the truth's per-update step.
    pub step_sigma: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            updates: 200,
            attempts: 100,
            recovery: 0.02,
            kappa: 1.0,
            eta: WALK_SIGMA * WALK_SIGMA,
            step_sigma: WALK_SIGMA,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.updates == 0 {
            return Err(FilterError::InvalidConfig("updates must be at least 1".into()));
        }
        RFConfig::new(self.attempts, self.recovery, 0)?;
        check_kappa(self.kappa)?;
        DiffusionKernel::isotropic(self.eta)?;
        if !(self.step_sigma >= 0.0 && self.step_sigma.is_finite()) {
            return Err(FilterError::InvalidConfig("step sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial: usize,
    pub k: usize,
    pub x_minus: f64,
    pub t: f64,
    pub outcome: u8,
    pub n_accepted: u64,
    pub mean: f64,
    pub trace_cov: f64,
    pub truth: f64,
    pub loss: f64,
}

impl ExperimentRecord {
    /// One CSV line matching [`CSV_HEADER`], without the newline.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.k,
            self.x_minus,
            self.t,
            self.outcome,
            self.n_accepted,
            self.mean,
            self.trace_cov,
            self.truth,
            self.loss
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Squared error of the prior mean before any update.
    pub initial_loss: f64,
    pub records: Vec<ExperimentRecord>,
}

impl TrialResult {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }
}

/// One independent tracking run on stream `trial` of `seed`.
///
/// Per update: diffuse by one time unit, design, measure the current truth,
/// advance the truth, filter, then record the loss against the advanced truth.
pub fn run_trial(config: &TrackingConfig, trial: usize, seed: u64) -> Result<TrialResult> {
    config.validate()?;
    let mut rng = rng::stream(seed, trial as u64);
    let kernel = DiffusionKernel::Isotropic(config.eta);
    let rf = RFConfig::new(config.attempts, config.recovery, seed)?;
    let mut truth = DriftingTruth::new(config.step_sigma, &mut rng);
    let mut model = initial_model();
    let initial_loss = (model.mean()[0] - truth.current).powi(2);

    let mut records = Vec::with_capacity(config.updates);
    for k in 1..=config.updates {
        model = diffuse(&model, &kernel, 1.0)?;
        let design = pgh_design(&model, &mut rng)?;
        let outcome = simulate_outcome(truth.current, design, &mut rng);
        truth.advance(&mut rng);
        let lik = FreqLikelihood::new(design, config.kappa)?;
        let update = rf_update(&[outcome], &model, &lik, &rf, &mut rng)?;
        model = update.model;
        let mean = model.mean()[0];
        records.push(ExperimentRecord {
            trial,
            k,
            x_minus: design.x_minus,
            t: design.t,
            outcome,
            n_accepted: update.accepted,
            mean,
            trace_cov: model.trace(),
            truth: truth.current,
            loss: (mean - truth.current).powi(2),
        });
    }
    Ok(TrialResult { initial_loss, records })
}

/// Runs `trials` independent trials in parallel; output is ordered by trial.
pub fn run_tracking(config: &TrackingConfig, trials: usize, seed: u64) -> Result<Vec<TrialResult>> {
    (0..trials).into_par_iter().map(|i| run_trial(config, i, seed)).collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median loss across trials at each update index.
pub fn median_loss_curve(results: &[TrialResult]) -> Vec<f64> {
    let updates = results.iter().map(|r| r.records.len()).min().unwrap_or(0);
    (0..updates).map(|k| median(&mut results.iter().map(|r| r.records[k].loss).collect::<Vec<_>>())).collect()
}

/// Means of consecutive non-overlapping windows of `width`, starting at
/// index `start`; a trailing partial window is dropped.
pub fn window_means(curve: &[f64], start: usize, width: usize) -> Vec<f64> {
    curve.get(start..).unwrap_or(&[]).chunks_exact(width).map(|w| w.iter().sum::<f64>() / width as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub measurements: usize,
    pub attempts: u64,
    pub recovery: f64,
    pub trials: usize,
    pub eta: f64,
    pub step_sigma: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { measurements: 100, attempts: 100, recovery: 0.02, trials: 200, eta: 0.0, step_sigma: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub median_initial_loss: f64,
    pub median_final_loss: f64,
    /// `median(final loss) / median(initial loss)`
    pub normalized_loss: f64,
}

/// Median final loss, normalized by the median initial loss, for each `κ_E`.
/// Every `κ_E` sees the same truths and the same random streams.
pub fn kappa_sweep(kappas: &[f64], config: &SweepConfig, seed: u64) -> Result<Vec<SweepRow>> {
    for &k in kappas {
        check_kappa(k)?;
    }
    if config.trials == 0 {
        return Err(FilterError::InvalidConfig("trials must be at least 1".into()));
    }
    kappas
        .iter()
        .map(|&kappa| {
            let tracking = TrackingConfig {
                updates: config.measurements,
                attempts: config.attempts,
                recovery: config.recovery,
                kappa,
                eta: config.eta,
                step_sigma: config.step_sigma,
            };
            let results = run_tracking(&tracking, config.trials, seed)?;
            let median_initial_loss = median(&mut results.iter().map(|r| r.initial_loss).collect::<Vec<_>>());
            let median_final_loss = median(&mut results.iter().map(TrialResult::final_loss).collect::<Vec<_>>());
            Ok(SweepRow {
                kappa,
                median_initial_loss,
                median_final_loss,
                normalized_loss: median_final_loss / median_initial_loss,
            })
        })
        .collect()
}
