//! Active binary classification with a discrete particle cloud.
//!
//! The hypotheses are training vectors. A session repeatedly queries the
//! single feature of the test vector that varies most across the cloud,
//! accepts each particle with probability `exp(−(x_i − E)²/2σ²)`, and
//! refills the cloud bootstrap-style within each class, until one class
//! holds at most `𝒫` of the accepted mass or the query budget runs out.

pub mod features;
pub mod idx;
pub mod knn;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::likelihood::{accept_sample, Likelihood};
use crate::rng;

pub use features::{feature_select, percentile_table};
pub use knn::knn_classify;

/// Fraction of each class's share refilled from surviving particles; the
/// rest are fresh draws from the corpus.
pub const REPLICATED_FRACTION: f64 = 0.95;
/// Floor on the likelihood width, relative to the feature's corpus range.
pub const SIGMA_FLOOR: f64 = 1e-3;
const MAX_RECOVERY_ROUNDS: usize = 10_000;

/// Labelled training vectors, stored row-major. Labels are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    by_class: [Vec<usize>; 2],
    feature_range: Vec<f64>,
}

impl Corpus {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(FilterError::DimensionMismatch { expected: dim * labels.len(), found: features.len() });
        }
        if labels.is_empty() {
            return Err(FilterError::InvalidConfig("corpus is empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(FilterError::InvalidConfig(format!("labels must be 0 or 1, got {bad}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::NonFinite);
        }
        let mut by_class = [Vec::new(), Vec::new()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in features.chunks_exact(dim) {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let feature_range = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
        Ok(Self { dim, features, labels, by_class, feature_range })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(FilterError::DimensionMismatch { expected: dim, found: r.len() });
        }
        Self::new(dim, rows.concat(), labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_members(&self, class: u8) -> &[usize] {
        &self.by_class[class as usize]
    }

    pub fn feature_range(&self, feature: usize) -> f64 {
        self.feature_range[feature]
    }

    /// Class frequencies of the whole corpus.
    pub fn class_proportions(&self) -> [f64; 2] {
        let n = self.len() as f64;
        [self.by_class[0].len() as f64 / n, self.by_class[1].len() as f64 / n]
    }

    /// Copy keeping only the listed features, in the given order.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        if let Some(&bad) = keep.iter().find(|&&j| j >= self.dim) {
            return Err(FilterError::DimensionMismatch { expected: self.dim, found: bad });
        }
        let features =
            (0..self.len()).flat_map(|i| keep.iter().map(move |&j| self.features[i * self.dim + j])).collect();
        Self::new(keep.len(), features, self.labels.clone())
    }

    /// Random split into `(train, test)` with `test_fraction` of the rows held out.
    pub fn split<R: Rng + ?Sized>(&self, test_fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        Ok((self.rows(&order[n_test..])?, self.rows(&order[..n_test])?))
    }

    /// Copy keeping only the listed rows, in the given order.
    pub fn rows(&self, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(FilterError::InvalidConfig(format!("row {bad} out of range for {} rows", self.len())));
        }
        let features = ids.iter().flat_map(|&i| self.vector(i).iter().copied()).collect();
        Self::new(self.dim, features, ids.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Particle {
    /// Row of the training vector in the corpus.
    pub index: usize,
    pub label: u8,
}

/// The finite hypothesis set of a classification session.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    particles: Vec<Particle>,
    capacity: usize,
}

impl ParticleCloud {
    pub fn new(particles: Vec<Particle>, capacity: usize) -> Result<Self> {
        if particles.is_empty() {
            return Err(FilterError::InvalidConfig("particle cloud must be nonempty".into()));
        }
        Ok(Self { particles, capacity })
    }

    /// `capacity` uniform draws per class, allocated in proportion to the
    /// corpus class frequencies.
    pub fn initial<R: Rng + ?Sized>(corpus: &Corpus, capacity: usize, rng: &mut R) -> Result<Self> {
        let counts = largest_remainder(corpus.class_proportions(), capacity);
        let mut particles = Vec::with_capacity(capacity);
        for class in 0..2u8 {
            draw_from_class(corpus, class, counts[class as usize], rng, &mut particles)?;
        }
        Self::new(particles, capacity)
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn class_proportions(&self) -> [f64; 2] {
        class_frequencies(&self.particles).unwrap_or([0.5, 0.5])
    }
}

fn class_frequencies(particles: &[Particle]) -> Option<[f64; 2]> {
    if particles.is_empty() {
        return None;
    }
    let ones = particles.iter().filter(|p| p.label == 1).count() as f64;
    let n = particles.len() as f64;
    Some([1.0 - ones / n, ones / n])
}

fn draw_from_class<R: Rng + ?Sized>(
    corpus: &Corpus,
    class: u8,
    count: usize,
    rng: &mut R,
    out: &mut Vec<Particle>,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let members = corpus.class_members(class);
    if members.is_empty() {
        return Err(FilterError::CorpusIntegrity(class));
    }
    out.extend((0..count).map(|_| Particle { index: members[rng.random_range(0..members.len())], label: class }));
    Ok(())
}

/// Integer counts summing to `total`, proportional to `weights`, by
/// largest-remainder rounding. Ties go to the lower class.
pub fn largest_remainder(weights: [f64; 2], total: usize) -> [usize; 2] {
    let sum = weights[0] + weights[1];
    if !(sum > 0.0) {
        return [total - total / 2, total / 2];
    }
    let exact = weights.map(|w| w / sum * total as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let short = total - counts[0] - counts[1];
    if short > 0 {
        let frac = [exact[0] - counts[0] as f64, exact[1] - counts[1] as f64];
        let first = if frac[1] > frac[0] { 1 } else { 0 };
        counts[first] += 1;
        if short > 1 {
            counts[1 - first] += 1;
        }
    }
    counts
}

/// Gaussian per-feature likelihood `exp(−(x_i − E)²/2σ²)`. Already bounded
/// by one, so the scale is one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelLikelihood {
    pub feature: usize,
    pub sigma: f64,
}

pub fn pixel_likelihood(observed: f64, x: &[f64], feature: usize, sigma: f64) -> f64 {
    let r = x[feature] - observed;
    (-(r * r) / (2.0 * sigma * sigma)).exp()
}

impl Likelihood<[f64]> for PixelLikelihood {
    type Evidence = f64;

    fn evaluate(&self, observed: &f64, x: &[f64]) -> f64 {
        pixel_likelihood(*observed, x, self.feature, self.sigma)
    }
}

/// Maximum-variance query: the feature whose intensity varies most across
/// the cloud (lowest index on ties) and its standard deviation, floored at
/// `1e-3` of the feature's corpus range.
pub fn select_query(cloud: &ParticleCloud, corpus: &Corpus) -> Result<PixelLikelihood> {
    let d = corpus.dim();
    let n = cloud.len() as f64;
    // shift by the first particle to keep the one-pass variance well conditioned
    let shift = corpus.vector(cloud.particles[0].index);
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    for p in &cloud.particles {
        let x = corpus.vector(p.index);
        for j in 0..d {
            let v = x[j] - shift[j];
            s1[j] += v;
            s2[j] += v * v;
        }
    }
    let mut best = (0, 0.0);
    for j in 0..d {
        let mean = s1[j] / n;
        let var = (s2[j] / n - mean * mean).max(0.0);
        if var > best.1 {
            best = (j, var);
        }
    }
    if !(best.1 > 0.0) {
        return Err(FilterError::DegenerateCloud);
    }
    let (feature, var) = best;
    Ok(PixelLikelihood { feature, sigma: var.sqrt().max(SIGMA_FLOOR * corpus.feature_range(feature)) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassUpdate {
    pub accepted: Vec<Particle>,
    /// Accepted class frequencies; the cloud's proportions if nothing was accepted.
    pub posterior: [f64; 2],
    /// Width actually used, after any recovery widening.
    pub sigma: f64,
}

/// Accepts each particle with probability `pixel_likelihood`. If none
/// survive, σ is widened by `(1 + recovery)` and the same observation is
/// retried.
pub fn rf_classify_update<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    corpus: &Corpus,
    observed: f64,
    query: PixelLikelihood,
    recovery: f64,
    rng: &mut R,
) -> Result<ClassUpdate> {
    let mut lik = query;
    for _ in 0..MAX_RECOVERY_ROUNDS {
        let mut accepted = Vec::new();
        for p in &cloud.particles {
            let u: f64 = rng.random();
            if accept_sample(corpus.vector(p.index), std::slice::from_ref(&observed), &lik, u)? {
                accepted.push(*p);
            }
        }
        if let Some(posterior) = class_frequencies(&accepted) {
            return Ok(ClassUpdate { accepted, posterior, sigma: lik.sigma });
        }
        if !(recovery > 0.0) {
            break;
        }
        lik.sigma *= 1.0 + recovery;
    }
    Ok(ClassUpdate { accepted: Vec::new(), posterior: cloud.class_proportions(), sigma: lik.sigma })
}

/// Bootstrap-style refill.
///
/// Class shares follow `posterior` (largest-remainder rounding). Within each
/// class, 95% of the share is made of copies of that class's survivors,
/// spread as evenly as possible, and the remaining 5% are uniform draws
/// from the corpus vectors of that class. With no survivors at all the
/// cloud is redrawn from the corpus class proportions.
pub fn resample_cloud<R: Rng + ?Sized>(
    accepted: &[Particle],
    posterior: [f64; 2],
    corpus: &Corpus,
    capacity: usize,
    rng: &mut R,
) -> Result<ParticleCloud> {
    if accepted.is_empty() {
        return ParticleCloud::initial(corpus, capacity, rng);
    }
    let counts = largest_remainder(posterior, capacity);
    let mut particles = Vec::with_capacity(capacity);
    for class in 0..2u8 {
        let share = counts[class as usize];
        if share == 0 {
            continue;
        }
        if corpus.class_members(class).is_empty() {
            return Err(FilterError::CorpusIntegrity(class));
        }
        let survivors: Vec<Particle> = accepted.iter().copied().filter(|p| p.label == class).collect();
        let replicated = if survivors.is_empty() { 0 } else { (share as f64 * REPLICATED_FRACTION).round() as usize };
        if replicated > 0 {
            let (copies, extra) = (replicated / survivors.len(), replicated % survivors.len());
            for p in &survivors {
                particles.extend(std::iter::repeat_n(*p, copies));
            }
            particles.extend(survivors.choose_multiple(rng, extra).copied());
        }
        draw_from_class(corpus, class, share - replicated, rng, &mut particles)?;
    }
    ParticleCloud::new(particles, capacity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Stop once the smaller class posterior is at most this.
    pub stop: f64,
    pub restarts: usize,
    /// Total feature reads, divided equally over the restarts.
    pub budget: usize,
    pub capacity: usize,
    pub recovery: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { stop: 0.01, restarts: 3, budget: 784, capacity: 1000, recovery: 0.02 }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop > 0.0 && self.stop < 0.5) {
            return Err(FilterError::InvalidConfig(format!("stop threshold must be in (0, 0.5), got {}", self.stop)));
        }
        if self.restarts == 0 || self.budget < self.restarts {
            return Err(FilterError::InvalidConfig("need 1 <= restarts <= budget".into()));
        }
        if self.capacity == 0 {
            return Err(FilterError::InvalidConfig("capacity must be at least 1".into()));
        }
        if !(self.recovery > 0.0 && self.recovery.is_finite()) {
            return Err(FilterError::InvalidConfig("recovery factor must be > 0".into()));
        }
        Ok(())
    }

    pub fn session_budget(&self) -> usize {
        self.budget / self.restarts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub label: u8,
    pub queries: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutcome {
    /// Majority label over sessions, ties to 0.
    pub label: u8,
    pub queries: usize,
    /// Reads per feature over all sessions.
    pub histogram: Vec<u64>,
    pub sessions: Vec<SessionOutcome>,
}

fn argmax(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

fn run_session<R: Rng + ?Sized>(
    test: &[f64],
    corpus: &Corpus,
    config: &ClassifyConfig,
    histogram: &mut [u64],
    rng: &mut R,
) -> Result<SessionOutcome> {
    let mut cloud = ParticleCloud::initial(corpus, config.capacity, rng)?;
    let mut queries = 0;
    while queries < config.session_budget() {
        let query = match select_query(&cloud, corpus) {
            Ok(q) => q,
            Err(FilterError::DegenerateCloud) => break,
            Err(e) => return Err(e),
        };
        let observed = test[query.feature];
        queries += 1;
        histogram[query.feature] += 1;
        let update = rf_classify_update(&cloud, corpus, observed, query, config.recovery, rng)?;
        if update.posterior[0].min(update.posterior[1]) <= config.stop {
            return Ok(SessionOutcome { label: argmax(update.posterior), queries, converged: true });
        }
        cloud = resample_cloud(&update.accepted, update.posterior, corpus, config.capacity, rng)?;
    }
    Ok(SessionOutcome { label: argmax(cloud.class_proportions()), queries, converged: false })
}

/// Classifies one test vector with `config.restarts` independent sessions.
pub fn classify<R: Rng + ?Sized>(
    test: &[f64],
    corpus: &Corpus,
    config: &ClassifyConfig,
    rng: &mut R,
) -> Result<ClassifyOutcome> {
    config.validate()?;
    if test.len() != corpus.dim() {
        return Err(FilterError::DimensionMismatch { expected: corpus.dim(), found: test.len() });
    }
    let mut histogram = vec![0u64; corpus.dim()];
    let sessions = (0..config.restarts)
        .map(|_| run_session(test, corpus, config, &mut histogram, rng))
        .collect::<Result<Vec<_>>>()?;
    let ones = sessions.iter().filter(|s| s.label == 1).count();
    let label = u8::from(2 * ones > sessions.len());
    let queries = sessions.iter().map(|s| s.queries).sum();
    Ok(ClassifyOutcome { label, queries, histogram, sessions })
}

/// Aggregate results over a labelled test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<u8>,
    pub queries: Vec<usize>,
    pub histogram: Vec<u64>,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn mean_queries(&self) -> f64 {
        self.queries.iter().sum::<usize>() as f64 / self.queries.len().max(1) as f64
    }
}

/// Classifies every row of `test` in parallel; row `i` uses stream `i` of `seed`.
pub fn evaluate(test: &Corpus, train: &Corpus, config: &ClassifyConfig, seed: u64) -> Result<Evaluation> {
    let outcomes = (0..test.len())
        .into_par_iter()
        .map(|i| classify(test.vector(i), train, config, &mut rng::stream(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = vec![0u64; train.dim()];
    for o in &outcomes {
        for (h, c) in histogram.iter_mut().zip(&o.histogram) {
            *h += c;
        }
    }
    let predictions: Vec<u8> = outcomes.iter().map(|o| o.label).collect();
    let correct = predictions.iter().zip(test.labels()).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        queries: outcomes.iter().map(|o| o.queries).collect(),
        predictions,
        histogram,
    })
}

/// Two Gaussian blobs: class 0 centred at the origin, class 1 at
/// `separation·noise` along every feature, isotropic noise `noise`.
pub fn synthetic_blobs<R: Rng + ?Sized>(
    per_class: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    rng: &mut R,
) -> Result<Corpus> {
    let normal = Normal::new(0.0, noise).map_err(|e| FilterError::InvalidConfig(e.to_string()))?;
    let mut features = Vec::with_capacity(2 * per_class * dim);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let label = (i % 2) as u8;
        let centre = f64::from(label) * separation * noise;
        features.extend((0..dim).map(|_| centre + normal.sample(rng)));
        labels.push(label);
    }
    Corpus::new(dim, features, labels)
}
