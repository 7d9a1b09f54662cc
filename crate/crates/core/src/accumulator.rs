//! Streaming first and second moments of accepted samples.
//!
//! Two representations are maintained side by side. The Welford form
//! (running mean plus centered co-moment) is what [`MomentAccumulator::finalize`]
//! uses. The raw sums `M = Σx` and `S = Σxxᵀ` are kept with Neumaier
//! compensation, which roughly doubles their working precision; they are what
//! batched nodes transmit.

use std::mem::size_of;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::gaussian::GaussianModel;

#[inline]
fn neumaier(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    count: u64,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
    sum: DVector<f64>,
    sum_comp: DVector<f64>,
    outer: DMatrix<f64>,
    outer_comp: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            comoment: DMatrix::zeros(dim, dim),
            sum: DVector::zeros(dim),
            sum_comp: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
            outer_comp: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of samples recorded.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Records one accepted sample.
    pub fn push(&mut self, x: &DVector<f64>) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(FilterError::DimensionMismatch { expected: d, found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite);
        }

        self.count += 1;
        let n = self.count as f64;
        let delta = x - &self.mean;
        self.mean.axpy(1.0 / n, &delta, 1.0);
        // (n-1)/n·δδᵀ keeps the co-moment exactly symmetric
        sym_rank1(&mut self.comoment, (n - 1.0) / n, &delta);

        for i in 0..d {
            neumaier(&mut self.sum[i], &mut self.sum_comp[i], x[i]);
            for j in 0..d {
                neumaier(&mut self.outer[(i, j)], &mut self.outer_comp[(i, j)], x[i] * x[j]);
            }
        }
        Ok(())
    }

    /// Combines two accumulators as if one had seen both streams.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_from(other)?;
        Ok(out)
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(FilterError::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean.axpy(nb / n, &delta, 1.0);
        self.comoment += &other.comoment;
        sym_rank1(&mut self.comoment, na * nb / n, &delta);
        self.count += other.count;

        let d = self.dim();
        for i in 0..d {
            neumaier(&mut self.sum[i], &mut self.sum_comp[i], other.sum[i]);
            neumaier(&mut self.sum[i], &mut self.sum_comp[i], other.sum_comp[i]);
            for j in 0..d {
                let (s, c) = (other.outer[(i, j)], other.outer_comp[(i, j)]);
                neumaier(&mut self.outer[(i, j)], &mut self.outer_comp[(i, j)], s);
                neumaier(&mut self.outer[(i, j)], &mut self.outer_comp[(i, j)], c);
            }
        }
        Ok(())
    }

    /// Running mean from the Welford path.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sample covariance from the Welford path; `None` with fewer than two samples.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.count >= 2).then(|| &self.comoment / (self.count as f64 - 1.0))
    }

    /// Raw `(Σx, Σxxᵀ)` with the compensation folded in.
    pub fn raw_sums(&self) -> (DVector<f64>, DMatrix<f64>) {
        (&self.sum + &self.sum_comp, &self.outer + &self.outer_comp)
    }

    /// Mean and covariance computed from the raw sums,
    /// `μ = M/N`, `Σ = (S − N·μμᵀ)/(N − 1)`.
    pub fn naive_moments(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if self.count < 2 {
            return None;
        }
        let (m, s) = self.raw_sums();
        Some(moments_from_sums(&m, &s, self.count))
    }

    /// Posterior model from the accepted samples.
    ///
    /// * two or more samples: Welford mean and sample covariance;
    /// * one sample: that sample as mean, `(1 + r)` times the fallback covariance;
    /// * none: fallback mean, `(1 + r)` times the fallback covariance.
    pub fn finalize(&self, fallback: &GaussianModel, recovery: f64) -> GaussianModel {
        match self.count {
            0 => fallback.inflated(1.0 + recovery),
            1 => GaussianModel::from_parts(self.mean.clone(), fallback.covariance() * (1.0 + recovery)),
            _ => GaussianModel::from_parts(self.mean.clone(), self.covariance().expect("count >= 2")),
        }
    }

    /// Bytes held by this accumulator, inline and on the heap.
    pub fn state_bytes(&self) -> usize {
        let d = self.dim();
        size_of::<Self>() + (3 * d + 3 * d * d) * size_of::<f64>()
    }
}

/// `μ = M/N`, `Σ = (S − N·μμᵀ)/(N − 1)`; requires `n ≥ 2`.
/// `m += c·δδᵀ`, written so that `m` stays exactly symmetric.
fn sym_rank1(m: &mut DMatrix<f64>, c: f64, delta: &DVector<f64>) {
    let d = delta.len();
    for j in 0..d {
        for i in j..d {
            let v = m[(i, j)] + c * (delta[i] * delta[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn moments_from_sums(sum: &DVector<f64>, outer: &DMatrix<f64>, n: u64) -> (DVector<f64>, DMatrix<f64>) {
    let nf = n as f64;
    let mean = sum / nf;
    let mut cov = outer.clone();
    cov.ger(-nf, &mean, &mean, 1.0);
    cov /= nf - 1.0;
    // S is accumulated symmetrically but rounding in the subtraction can differ
    let cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}
