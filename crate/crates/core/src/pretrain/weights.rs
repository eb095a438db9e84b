//! Per-pair weights from in-batch keypoint distances.
//!
//! Within a pool of distances, `w = (d_max - d) / (d_max - d_min)`: the
//! closest pair gets 1, the farthest 0. Positive pairs and anchor-negative
//! pairs are normalized as two separate pools.

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Weights for a batch of `2N` samples where sample `i` pairs with
/// `(i + N) mod 2N`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchWeights {
    /// One weight per pair, indexed by `i mod N`.
    pub pos: Vec<f64>,
    /// Row-major `2N x 2N`; diagonal and partner entries are unused and 0.
    pub neg: Vec<f64>,
    pub batch: usize,
}

impl BatchWeights {
    pub fn pos_for(&self, anchor: usize) -> f64 {
        self.pos[anchor % (self.batch / 2)]
    }

    pub fn neg_for(&self, anchor: usize, other: usize) -> f64 {
        self.neg[anchor * self.batch + other]
    }

    /// Every weight 1.
    pub fn uniform(batch: usize) -> Self {
        let n = batch / 2;
        let mut neg = vec![1.0; batch * batch];
        for i in 0..batch {
            neg[i * batch + i] = 0.0;
            neg[i * batch + partner(i, n)] = 0.0;
        }
        Self {
            pos: vec![1.0; n],
            neg,
            batch,
        }
    }
}

#[inline]
pub fn partner(i: usize, n: usize) -> usize {
    if i < n {
        i + n
    } else {
        i - n
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Min-max scaling of one pool; a degenerate pool maps to all ones.
pub fn normalize_pool(distances: &[f64]) -> Vec<f64> {
    let (lo, hi) = distances
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if hi == lo {
        return vec![1.0; distances.len()];
    }
    distances.iter().map(|&d| (hi - d) / (hi - lo)).collect()
}

fn check_batch(points: &[Vec<f64>]) -> Result<()> {
    let b = points.len();
    if b < 4 || b % 2 != 0 {
        return Err(Error::param(format!("weighting needs an even batch of at least 4, got {b}")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("keypoint embedding"));
    }
    Ok(())
}

/// Adaptive weights from `2N` keypoint embeddings.
pub fn adaptive_weights(points: &[Vec<f64>]) -> Result<BatchWeights> {
    check_batch(points)?;
    let b = points.len();
    let n = b / 2;

    let pos_d: Vec<f64> = (0..n).map(|i| euclidean(&points[i], &points[i + n])).collect();
    let pos = normalize_pool(&pos_d);

    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for k in i + 1..b {
            let d = euclidean(&points[i], &points[k]);
            dist[i * b + k] = d;
            dist[k * b + i] = d;
        }
    }
    let slots: Vec<usize> = (0..b)
        .flat_map(|i| (0..b).filter(move |&k| k != i && k != partner(i, n)).map(move |k| i * b + k))
        .collect();
    let neg_d: Vec<f64> = slots.iter().map(|&s| dist[s]).collect();
    let mut neg = vec![0.0; b * b];
    for (slot, w) in slots.into_iter().zip(normalize_pool(&neg_d)) {
        neg[slot] = w;
    }
    Ok(BatchWeights { pos, neg, batch: b })
}

/// How pair weights are derived for a batch.
pub trait PairWeighting: Send + Sync {
    fn name(&self) -> &'static str;
    fn weights(&self, keypoint_embeddings: &[Vec<f64>]) -> Result<BatchWeights>;
}

pub struct Adaptive;

impl PairWeighting for Adaptive {
    fn name(&self) -> &'static str {
        "adaptive"
    }

    fn weights(&self, keypoint_embeddings: &[Vec<f64>]) -> Result<BatchWeights> {
        adaptive_weights(keypoint_embeddings)
    }
}

/// All weights 1: the plain NT-Xent objective.
pub struct Uniform;

impl PairWeighting for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weights(&self, keypoint_embeddings: &[Vec<f64>]) -> Result<BatchWeights> {
        let b = keypoint_embeddings.len();
        if b < 2 || b % 2 != 0 {
            return Err(Error::param(format!("batch of {b} samples is not a set of pairs")));
        }
        Ok(BatchWeights::uniform(b))
    }
}

pub fn weighting_registry() -> Registry<dyn PairWeighting> {
    let mut reg: Registry<dyn PairWeighting> = Registry::new("weighting");
    reg.register("adaptive", || Box::new(Adaptive));
    reg.register("uniform", || Box::new(Uniform));
    reg
}
