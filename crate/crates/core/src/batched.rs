//! Attempt-sharded updates.
//!
//! A logical update of `m` attempts is split across `N_batch` nodes. Each node
//! runs the rejection loop on its own random stream and reports the raw sums
//! `(N_aⁱ, Mⁱ = Σx, Sⁱ = Σxxᵀ)` of its accepted samples; the coordinator adds
//! them up and refits the Gaussian. Nodes never round-trip through a
//! finalized mean and covariance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accumulator::{moments_from_sums, MomentAccumulator};
use crate::error::{FilterError, Result};
use crate::filter::{run_attempts, RFConfig};
use crate::gaussian::GaussianModel;
use crate::likelihood::Likelihood;
use crate::rng;

/// What a node sends back to the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialRecord", into = "PartialRecord")]
pub struct PartialUpdate {
    pub node_id: u64,
    pub accepted: u64,
    pub partial_sum: DVector<f64>,
    pub partial_outer: DMatrix<f64>,
    pub seed_used: u64,
}

/// Flat wire layout: `S` is stored row-major.
#[derive(Serialize, Deserialize)]
struct PartialRecord {
    node_id: u64,
    accepted: u64,
    partial_sum: Vec<f64>,
    partial_outer: Vec<f64>,
    seed_used: u64,
}

impl From<PartialUpdate> for PartialRecord {
    fn from(p: PartialUpdate) -> Self {
        Self {
            node_id: p.node_id,
            accepted: p.accepted,
            partial_sum: p.partial_sum.as_slice().to_vec(),
            partial_outer: p.partial_outer.transpose().as_slice().to_vec(),
            seed_used: p.seed_used,
        }
    }
}

impl TryFrom<PartialRecord> for PartialUpdate {
    type Error = FilterError;

    fn try_from(r: PartialRecord) -> Result<Self> {
        let d = r.partial_sum.len();
        if r.partial_outer.len() != d * d {
            return Err(FilterError::DimensionMismatch { expected: d * d, found: r.partial_outer.len() });
        }
        Ok(Self {
            node_id: r.node_id,
            accepted: r.accepted,
            partial_sum: DVector::from_vec(r.partial_sum),
            partial_outer: DMatrix::from_row_slice(d, d, &r.partial_outer),
            seed_used: r.seed_used,
        })
    }
}

impl PartialUpdate {
    pub fn empty(node_id: u64, dim: usize, seed_used: u64) -> Self {
        Self {
            node_id,
            accepted: 0,
            partial_sum: DVector::zeros(dim),
            partial_outer: DMatrix::zeros(dim, dim),
            seed_used,
        }
    }

    pub fn dim(&self) -> usize {
        self.partial_sum.len()
    }

    /// Little-endian record: `node_id, N_a, M[0..D], S[0..D²] (row-major), seed`.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(8 * (3 + d + d * d));
        out.extend_from_slice(&self.node_id.to_le_bytes());
        out.extend_from_slice(&self.accepted.to_le_bytes());
        for v in self.partial_sum.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..d {
            for j in 0..d {
                out.extend_from_slice(&self.partial_outer[(i, j)].to_le_bytes());
            }
        }
        out.extend_from_slice(&self.seed_used.to_le_bytes());
        out
    }

    pub fn from_le_bytes(bytes: &[u8], dim: usize) -> Result<Self> {
        let expected = 8 * (3 + dim + dim * dim);
        if bytes.len() != expected {
            return Err(FilterError::DimensionMismatch { expected, found: bytes.len() });
        }
        let mut words = bytes.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).expect("chunk of 8"));
        let mut next = || words.next().expect("length checked");
        let node_id = u64::from_le_bytes(next());
        let accepted = u64::from_le_bytes(next());
        let partial_sum = DVector::from_iterator(dim, (0..dim).map(|_| f64::from_le_bytes(next())));
        let row_major: Vec<f64> = (0..dim * dim).map(|_| f64::from_le_bytes(next())).collect();
        let seed_used = u64::from_le_bytes(next());
        Ok(Self {
            node_id,
            accepted,
            partial_sum,
            partial_outer: DMatrix::from_row_slice(dim, dim, &row_major),
            seed_used,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partial update serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Splits `attempts` over `nodes` as evenly as possible; the first
/// `attempts % nodes` nodes get one extra.
pub fn split_attempts(attempts: u64, nodes: usize) -> Vec<u64> {
    let n = nodes as u64;
    let (q, rem) = (attempts / n, attempts % n);
    (0..n).map(|i| q + u64::from(i < rem)).collect()
}

/// Seed of node `node_id` under `master_seed`.
pub fn node_seed(master_seed: u64, node_id: u64) -> u64 {
    rng::derive_seed(master_seed, node_id)
}

/// Runs one node's share of the attempts and returns its raw sums.
pub fn node_update<L>(
    evidence: &[L::Evidence],
    prior: &GaussianModel,
    likelihood: &L,
    attempts: u64,
    node_id: u64,
    seed: u64,
) -> Result<PartialUpdate>
where
    L: Likelihood<DVector<f64>>,
{
    if attempts == 0 {
        return Err(FilterError::InvalidConfig("node attempts must be at least 1".into()));
    }
    let mut sampler = prior.sampler()?;
    let mut acc = MomentAccumulator::new(prior.dim());
    let stats = run_attempts(evidence, &mut sampler, likelihood, attempts, &mut rng::seeded(seed), &mut acc)?;
    if stats.accepted == 0 {
        return Ok(PartialUpdate::empty(node_id, prior.dim(), seed));
    }
    let (partial_sum, partial_outer) = acc.raw_sums();
    Ok(PartialUpdate { node_id, accepted: stats.accepted, partial_sum, partial_outer, seed_used: seed })
}

/// Adds up node sums and refits the Gaussian.
///
/// Partials are summed in `node_id` order so the result does not depend on
/// arrival order. Zero or one accepted sample in total falls back the same
/// way as [`MomentAccumulator::finalize`].
pub fn combine(partials: &[PartialUpdate], fallback: &GaussianModel, recovery: f64) -> Result<(GaussianModel, u64)> {
    let d = fallback.dim();
    if let Some(p) = partials.iter().find(|p| p.dim() != d || p.partial_outer.shape() != (d, d)) {
        return Err(FilterError::DimensionMismatch { expected: d, found: p.dim() });
    }
    let mut ordered: Vec<&PartialUpdate> = partials.iter().collect();
    ordered.sort_by_key(|p| (p.node_id, p.seed_used));

    let total: u64 = ordered.iter().map(|p| p.accepted).sum();
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    for p in &ordered {
        sum += &p.partial_sum;
        outer += &p.partial_outer;
    }
    let model = match total {
        0 => fallback.inflated(1.0 + recovery),
        1 => GaussianModel::from_parts(sum, fallback.covariance() * (1.0 + recovery)),
        n => {
            let (mean, cov) = moments_from_sums(&sum, &outer, n);
            GaussianModel::from_parts(mean, cov)
        }
    };
    Ok((model, total))
}

/// Result of a sharded update.
#[derive(Debug, Clone)]
pub struct BatchedOutcome {
    pub model: GaussianModel,
    pub accepted: u64,
    pub partials: Vec<PartialUpdate>,
}

/// Distributes `config.attempts` over `n_batch` nodes run in parallel.
/// Deterministic for fixed `(master_seed, n_batch)`.
pub fn batched_update<L>(
    evidence: &[L::Evidence],
    prior: &GaussianModel,
    likelihood: &L,
    config: &RFConfig,
    n_batch: usize,
    master_seed: u64,
) -> Result<BatchedOutcome>
where
    L: Likelihood<DVector<f64>> + Sync,
    L::Evidence: Sync,
{
    config.validate()?;
    if n_batch == 0 || n_batch as u64 > config.attempts {
        return Err(FilterError::InvalidConfig(format!("need 1 <= N_batch <= attempts, got N_batch = {n_batch}")));
    }
    let shares = split_attempts(config.attempts, n_batch);
    let partials = shares
        .par_iter()
        .enumerate()
        .map(|(i, &share)| {
            let id = i as u64;
            node_update(evidence, prior, likelihood, share, id, node_seed(master_seed, id))
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, accepted) = combine(&partials, prior, config.recovery)?;
    Ok(BatchedOutcome { model, accepted, partials })
}

/// Equivalence harness: one accumulator consumes every node's random stream
/// in node order, so it sees exactly the accepted-sample multiset of the
/// sharded run. Finalizes through the Welford path.
pub fn replay_single_node<L>(
    evidence: &[L::Evidence],
    prior: &GaussianModel,
    likelihood: &L,
    config: &RFConfig,
    n_batch: usize,
    master_seed: u64,
) -> Result<(GaussianModel, u64, MomentAccumulator)>
where
    L: Likelihood<DVector<f64>>,
{
    config.validate()?;
    let mut sampler = prior.sampler()?;
    let mut acc = MomentAccumulator::new(prior.dim());
    for (i, share) in split_attempts(config.attempts, n_batch).into_iter().enumerate() {
        let mut stream = rng::seeded(node_seed(master_seed, i as u64));
        run_attempts(evidence, &mut sampler, likelihood, share, &mut stream, &mut acc)?;
    }
    Ok((acc.finalize(prior, config.recovery), acc.count(), acc))
}

/// Relative max-norm distance `max|a − b| / max|b|` over mean and covariance.
pub fn relative_model_delta(a: &GaussianModel, b: &GaussianModel) -> f64 {
    let mean_scale = b.mean().amax().max(f64::MIN_POSITIVE);
    let cov_scale = b.covariance().amax().max(f64::MIN_POSITIVE);
    let dm = (a.mean() - b.mean()).amax() / mean_scale;
    let dc = (a.covariance() - b.covariance()).amax() / cov_scale;
    dm.max(dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::rf_update;
    use crate::likelihood::FnLikelihood;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn prior2() -> GaussianModel {
        GaussianModel::new(v(&[1.0, -0.5]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap()
    }

    fn partial_of(node_id: u64, samples: &[Vec<f64>]) -> PartialUpdate {
        let mut acc = MomentAccumulator::new(samples[0].len());
        for s in samples {
            acc.push(&v(s)).unwrap();
        }
        let (m, s) = acc.raw_sums();
        PartialUpdate { node_id, accepted: acc.count(), partial_sum: m, partial_outer: s, seed_used: 0 }
    }

    #[test]
    fn attempts_split_evenly() {
        assert_eq!(split_attempts(10, 3), vec![4, 3, 3]);
        assert_eq!(split_attempts(1000, 8), vec![125; 8]);
        assert_eq!(split_attempts(7, 1), vec![7]);
    }

    #[test]
    fn reject_all_node_reports_zeros() {
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| 0.0);
        let p = node_update(&[()], &prior2(), &lik, 50, 3, 9).unwrap();
        assert_eq!(p, PartialUpdate::empty(3, 2, 9));
    }

    #[test]
    fn reject_all_everywhere_recovers() {
        let lik = FnLikelihood::new(|_: &(), _: &DVector<f64>| 0.0);
        let config = RFConfig::new(100, 0.02, 0).unwrap();
        let out = batched_update(&[()], &prior2(), &lik, &config, 4, 1).unwrap();
        assert_eq!(out.accepted, 0);
        assert_eq!(out.model.mean(), prior2().mean());
        assert!((out.model.covariance() - prior2().covariance() * 1.02).amax() < 1e-15);
    }

    #[test]
    fn single_node_matches_rf_update() {
        let lik = FnLikelihood::new(|_: &(), x: &DVector<f64>| (-(x[0] - 1.5).powi(2)).exp());
        let config = RFConfig::new(2000, 0.02, 0).unwrap();
        let p = node_update(&[()], &prior2(), &lik, 2000, 0, 77).unwrap();
        let (batched, n) = combine(&[p], &prior2(), 0.02).unwrap();
        let single = rf_update(&[()], &prior2(), &lik, &config, &mut rng::seeded(77)).unwrap();
        assert_eq!(n, single.accepted);
        assert!(relative_model_delta(&batched, &single.model) < 1e-12);
    }

    #[test]
    fn one_partial_equals_its_finalize() {
        let samples = [vec![0.5, 1.0], vec![2.0, -1.0], vec![1.0, 0.0], vec![3.0, 3.0]];
        let mut acc = MomentAccumulator::new(2);
        for s in &samples {
            acc.push(&v(s)).unwrap();
        }
        let (model, n) = combine(&[partial_of(0, &samples)], &prior2(), 0.0).unwrap();
        assert_eq!(n, 4);
        assert!(relative_model_delta(&model, &acc.finalize(&prior2(), 0.0)) < 1e-12);
    }

    #[test]
    fn two_partials_equal_pooled_moments() {
        let a = partial_of(0, &[vec![1.0, 0.0]]);
        let b = partial_of(1, &[vec![0.0, 1.0], vec![2.0, 2.0]]);
        let (model, n) = combine(&[a, b], &prior2(), 0.0).unwrap();
        assert_eq!(n, 3);
        // pooled {(1,0),(0,1),(2,2)}: mean (1,1);
        // deviations (0,-1),(-1,0),(1,1) → cov [[1, 0.5],[0.5, 1]]
        let expect = GaussianModel::new(v(&[1.0, 1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        assert!(relative_model_delta(&model, &expect) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = partial_of(0, &[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(combine(&[p], &prior2(), 0.0), Err(FilterError::DimensionMismatch { .. })));
    }

    #[test]
    fn wire_formats_round_trip() {
        let p = partial_of(5, &[vec![1.0, 2.0], vec![0.25, -3.0], vec![7.0, 1.0]]);
        let bytes = p.to_le_bytes();
        assert_eq!(bytes.len(), 8 * (3 + 2 + 4));
        assert_eq!(&bytes[..8], &5u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(PartialUpdate::from_le_bytes(&bytes, 2).unwrap(), p);
        assert!(PartialUpdate::from_le_bytes(&bytes, 3).is_err());

        let json = p.to_json();
        assert!(json.contains("\"partial_outer\":["));
        assert_eq!(PartialUpdate::from_json(&json).unwrap(), p);
        assert!(PartialUpdate::from_json(
            r#"{"node_id":0,"accepted":1,"partial_sum":[1.0,2.0],"partial_outer":[1.0],"seed_used":0}"#
        )
        .is_err());
    }

    #[test]
    fn sharded_runs_match_replay() {
        let lik = FnLikelihood::new(|_: &(), x: &DVector<f64>| 1.0 / (1.0 + (x[0] + x[1]).powi(2)));
        let config = RFConfig::new(1000, 0.02, 0).unwrap();
        for n_batch in [1, 2, 3, 8] {
            let out = batched_update(&[()], &prior2(), &lik, &config, n_batch, 42).unwrap();
            let (single, n, _) = replay_single_node(&[()], &prior2(), &lik, &config, n_batch, 42).unwrap();
            assert_eq!(out.accepted, n);
            assert_eq!(out.accepted, out.partials.iter().map(|p| p.accepted).sum::<u64>());
            assert!(relative_model_delta(&out.model, &single) < 1e-9, "N_batch = {n_batch}");
        }
    }

    proptest! {
        #[test]
        fn combine_ignores_arrival_order(seed in any::<u64>(), rot in 0usize..8) {
            let lik = FnLikelihood::new(|_: &(), x: &DVector<f64>| (-(x[0] * x[1]).abs()).exp());
            let config = RFConfig::new(400, 0.0, 0).unwrap();
            let out = batched_update(&[()], &prior2(), &lik, &config, 8, seed).unwrap();
            let mut shuffled = out.partials.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            let (model, n) = combine(&shuffled, &prior2(), 0.0).unwrap();
            prop_assert_eq!(n, out.accepted);
            prop_assert!(relative_model_delta(&model, &out.model) <= 1e-9);
        }
    }
}
