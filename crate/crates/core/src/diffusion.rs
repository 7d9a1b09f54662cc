//! Prediction step for drifting parameters.
//!
//! Convolving a Gaussian belief with a zero-mean Gaussian kernel keeps the
//! mean and adds the kernel variance, so tracking a random walk costs one
//! matrix addition per update.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::gaussian::GaussianModel;

/// Variance added per unit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiffusionKernel {
    /// `η·dt·I`
    Isotropic(f64),
    /// `R·dt` for a symmetric PSD rate matrix `R`.
    Matrix(DMatrix<f64>),
}

impl DiffusionKernel {
    pub fn isotropic(rate: f64) -> Result<Self> {
        if rate >= 0.0 && rate.is_finite() {
            Ok(Self::Isotropic(rate))
        } else {
            Err(FilterError::InvalidConfig(format!("diffusion rate must be >= 0, got {rate}")))
        }
    }

    pub fn matrix(rate: DMatrix<f64>) -> Result<Self> {
        // reuse the model checks for symmetry and PSD
        let d = rate.nrows();
        GaussianModel::new(nalgebra::DVector::zeros(d), rate.clone())
            .map_err(|_| FilterError::InvalidConfig("rate matrix must be symmetric PSD".into()))?;
        Ok(Self::Matrix(rate))
    }
}

/// Returns the belief after `dt` units of drift.
pub fn diffuse(model: &GaussianModel, kernel: &DiffusionKernel, dt: f64) -> Result<GaussianModel> {
    if !(dt >= 0.0) {
        return Err(FilterError::NegativeTimeStep(dt));
    }
    let d = model.dim();
    let mut cov = model.covariance().clone();
    match kernel {
        DiffusionKernel::Isotropic(rate) => {
            for i in 0..d {
                cov[(i, i)] += rate * dt;
            }
        }
        DiffusionKernel::Matrix(rate) => {
            if rate.nrows() != d {
                return Err(FilterError::DimensionMismatch { expected: d, found: rate.nrows() });
            }
            cov += rate * dt;
        }
    }
    Ok(GaussianModel::from_parts(model.mean().clone(), cov))
}
