//! Gaussian belief state and sampling from it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Mean vector and covariance matrix; the entire stored belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianModel {
    /// Builds a model, checking dimensions, symmetry and positive semidefiniteness.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let model = Self { mean, covariance };
        model.validate()?;
        Ok(model)
    }

    /// One-dimensional model with the given variance.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    /// Builds a model without validation. Used internally where the
    /// covariance is constructed as a sum of outer products.
    pub(crate) fn from_parts(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    /// Same mean, covariance multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        Self { mean: self.mean.clone(), covariance: &self.covariance * factor }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        let (rows, cols) = self.covariance.shape();
        if rows != d {
            return Err(FilterError::DimensionMismatch { expected: d, found: rows });
        }
        if cols != d {
            return Err(FilterError::DimensionMismatch { expected: d, found: cols });
        }
        if self.mean.iter().chain(self.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (self.covariance[(i, j)], self.covariance[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(1.0) {
                    return Err(FilterError::Factorization);
                }
            }
        }
        if d > 0 {
            let min_eig = self.covariance.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            if min_eig < -PSD_TOL * self.trace().abs() {
                return Err(FilterError::Factorization);
            }
        }
        Ok(())
    }

    /// Lower-triangular factor `A` with `A·Aᵀ ≈ Σ`.
    ///
    /// Plain Cholesky is tried first; on failure a diagonal jitter of
    /// `1e-12·tr Σ` is added and escalated tenfold up to `1e-6·tr Σ`.
    /// An all-zero covariance factors to the zero matrix.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if self.covariance.iter().all(|&v| v == 0.0) {
            return Ok(DMatrix::zeros(d, d));
        }
        if let Some(chol) = self.covariance.clone().cholesky() {
            return Ok(chol.unpack());
        }
        let trace = self.trace();
        if !(trace > 0.0) {
            return Err(FilterError::Factorization);
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let shifted = &self.covariance + DMatrix::identity(d, d) * (jitter * trace);
            if let Some(chol) = shifted.cholesky() {
                return Ok(chol.unpack());
            }
            jitter *= 10.0;
        }
        Err(FilterError::Factorization)
    }

    /// Prepares a reusable sampler; the factorization is done once.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler { mean: self.mean.clone(), factor: self.factor()?, z: DVector::zeros(self.dim()) })
    }
}

/// Draws `μ + A·z` with `z` standard normal.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    z: DVector<f64>,
}

impl GaussianSampler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut DVector<f64>) {
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        out.copy_from(&self.mean);
        out.gemv(1.0, &self.factor, &self.z, 1.0);
    }
}

/// Draws a single hypothesis from `model`.
pub fn sample_prior<R: Rng + ?Sized>(model: &GaussianModel, rng: &mut R) -> Result<DVector<f64>> {
    Ok(model.sampler()?.sample(rng))
}
