//! Weighted NT-Xent over a batch of `2N` features, with its gradient.
//!
//! For anchor `i` with partner `p` and temperature `tau`, the logits are
//! `w_pos * sim(i, p) / tau` and `w_neg(i, k) * sim(i, k) / tau` for every
//! other `k`, where `sim` is cosine similarity. The standard denominator
//! holds the positive logit and all negatives; the literal one holds the
//! negatives only. Every sample anchors once and the loss is the mean.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::weights::{partner, BatchWeights};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    #[default]
    Standard,
    Literal,
}

impl FromStr for Denominator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!(
                "unknown loss denominator `{other}` (expected standard or literal)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    /// Row-major `2N x P` gradient of `loss` w.r.t. the input features.
    pub grad: Vec<f64>,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `features` is row-major `2N x P`.
pub fn weighted_ntxent(
    features: &[f64],
    dim: usize,
    weights: &BatchWeights,
    tau: f64,
    denominator: Denominator,
) -> Result<LossReport> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("temperature {tau} must be positive")));
    }
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::DimMismatch {
            expected: dim,
            found: features.len(),
        });
    }
    let b = features.len() / dim;
    if b < 2 || b % 2 != 0 || weights.batch != b {
        return Err(Error::param(format!(
            "batch of {b} features does not match {} weights",
            weights.batch
        )));
    }
    let n = b / 2;
    if denominator == Denominator::Literal && b < 4 {
        return Err(Error::param("literal denominator needs at least one negative"));
    }

    let mut unit = vec![0.0; features.len()];
    let mut norms = vec![0.0; b];
    for i in 0..b {
        let row = &features[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(i));
        }
        norms[i] = norm;
        for (u, x) in unit[i * dim..(i + 1) * dim].iter_mut().zip(row) {
            *u = x / norm;
        }
    }
    let sim = |i: usize, k: usize| -> f64 {
        unit[i * dim..(i + 1) * dim]
            .iter()
            .zip(&unit[k * dim..(k + 1) * dim])
            .map(|(a, c)| a * c)
            .sum()
    };
    let mut s = vec![0.0; b * b];
    for i in 0..b {
        for k in i..b {
            let v = sim(i, k);
            s[i * b + k] = v;
            s[k * b + i] = v;
        }
    }

    // dL/dS, accumulated per anchor row
    let mut g_s = vec![0.0; b * b];
    let mut per_anchor = Vec::with_capacity(b);
    let scale = 1.0 / b as f64;
    for i in 0..b {
        let p = partner(i, n);
        let w_pos = weights.pos_for(i);
        let pos_logit = w_pos * s[i * b + p] / tau;
        let negs = (0..b).filter(|&k| k != i && k != p);
        let neg_logit = |k: usize| weights.neg_for(i, k) * s[i * b + k] / tau;
        let lse = match denominator {
            Denominator::Standard => {
                log_sum_exp(std::iter::once(pos_logit).chain(negs.clone().map(neg_logit)))
            }
            Denominator::Literal => log_sum_exp(negs.clone().map(neg_logit)),
        };
        per_anchor.push(lse - pos_logit);

        let pos_prob = match denominator {
            Denominator::Standard => (pos_logit - lse).exp(),
            Denominator::Literal => 0.0,
        };
        g_s[i * b + p] += scale * (pos_prob - 1.0) * w_pos / tau;
        for k in negs {
            let prob = (neg_logit(k) - lse).exp();
            g_s[i * b + k] += scale * prob * weights.neg_for(i, k) / tau;
        }
    }

    // S[i][k] = u_i . u_k feeds both rows
    let mut g_u = vec![0.0; features.len()];
    for i in 0..b {
        for k in 0..b {
            let g = g_s[i * b + k];
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                g_u[i * dim + d] += g * unit[k * dim + d];
                g_u[k * dim + d] += g * unit[i * dim + d];
            }
        }
    }
    let mut grad = vec![0.0; features.len()];
    for i in 0..b {
        let u = &unit[i * dim..(i + 1) * dim];
        let gu = &g_u[i * dim..(i + 1) * dim];
        let radial: f64 = u.iter().zip(gu).map(|(a, c)| a * c).sum();
        for d in 0..dim {
            grad[i * dim + d] = (gu[d] - radial * u[d]) / norms[i];
        }
    }

    let mean_pos_sim = (0..n).map(|i| s[i * b + i + n]).sum::<f64>() / n as f64;
    let neg_count = b * (b - 2);
    let mean_neg_sim = if neg_count == 0 {
        0.0
    } else {
        (0..b)
            .flat_map(|i| (0..b).filter(move |&k| k != i && k != partner(i, n)).map(move |k| (i, k)))
            .map(|(i, k)| s[i * b + k])
            .sum::<f64>()
            / neg_count as f64
    };

    Ok(LossReport {
        loss: per_anchor.iter().sum::<f64>() / b as f64,
        per_anchor,
        grad,
        mean_pos_sim,
        mean_neg_sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretrain::weights::adaptive_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> Vec<f64> {
        (0..b * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_pair_is_zero() {
        let z = vec![1.0, 0.5, -0.2, 0.3];
        let r = weighted_ntxent(&z, 2, &BatchWeights::uniform(2), 0.5, Denominator::Standard).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn orthogonal_pairs() {
        // (e1, e2 | e1, e2): sample i pairs with i + 2
        let z = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let r = weighted_ntxent(&z, 2, &BatchWeights::uniform(4), 0.5, Denominator::Standard).unwrap();
        let e2 = (2.0f64).exp();
        let want = -(e2 / (e2 + 2.0)).ln();
        for l in &r.per_anchor {
            assert!((l - want).abs() < 1e-12);
        }
        assert!((r.mean_pos_sim - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_and_bad_tau() {
        let z = vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.5, 0.5];
        let w = BatchWeights::uniform(4);
        assert!(matches!(
            weighted_ntxent(&z, 2, &w, 0.5, Denominator::Standard),
            Err(Error::ZeroNorm(1))
        ));
        let z = vec![1.0; 8];
        assert!(weighted_ntxent(&z, 2, &w, 0.0, Denominator::Standard).is_err());
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = 8;
        let dim = 6;
        let z = random_features(&mut rng, b, dim);
        let kp: Vec<Vec<f64>> = (0..b).map(|_| random_features(&mut rng, 1, 3)).collect();
        let w = adaptive_weights(&kp).unwrap();
        let base = weighted_ntxent(&z, dim, &w, 0.5, Denominator::Standard).unwrap();
        let mut scaled = z.clone();
        for v in &mut scaled[2 * dim..3 * dim] {
            *v *= 3.0;
        }
        let r = weighted_ntxent(&scaled, dim, &w, 0.5, Denominator::Standard).unwrap();
        assert!((base.loss - r.loss).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &b in &[4usize, 8, 16] {
            for denom in [Denominator::Standard, Denominator::Literal] {
                let dim = 4;
                let z = random_features(&mut rng, b, dim);
                let kp: Vec<Vec<f64>> = (0..b).map(|_| random_features(&mut rng, 1, 3)).collect();
                let w = adaptive_weights(&kp).unwrap();
                let r = weighted_ntxent(&z, dim, &w, 0.5, denom).unwrap();
                let h = 1e-5;
                let mut num = vec![0.0; z.len()];
                for j in 0..z.len() {
                    let mut zp = z.clone();
                    zp[j] += h;
                    let mut zm = z.clone();
                    zm[j] -= h;
                    let lp = weighted_ntxent(&zp, dim, &w, 0.5, denom).unwrap().loss;
                    let lm = weighted_ntxent(&zm, dim, &w, 0.5, denom).unwrap().loss;
                    num[j] = (lp - lm) / (2.0 * h);
                }
                let diff: f64 = num.iter().zip(&r.grad).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(diff / norm < 1e-4, "b={b} {denom:?}: rel err {}", diff / norm);
            }
        }
    }

    #[test]
    fn standard_loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let z = random_features(&mut rng, 8, 5);
            let kp: Vec<Vec<f64>> = (0..8).map(|_| random_features(&mut rng, 1, 2)).collect();
            let w = adaptive_weights(&kp).unwrap();
            let r = weighted_ntxent(&z, 5, &w, 0.5, Denominator::Standard).unwrap();
            assert!(r.per_anchor.iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn literal_drops_positive_from_denominator() {
        let z = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let r = weighted_ntxent(&z, 2, &BatchWeights::uniform(4), 0.5, Denominator::Literal).unwrap();
        // -2 + log(2 e^0)
        assert!((r.per_anchor[0] - (2f64.ln() - 2.0)).abs() < 1e-12);
        assert!(weighted_ntxent(&z[..4], 2, &BatchWeights::uniform(2), 0.5, Denominator::Literal).is_err());
    }

    #[test]
    fn parse_denominator() {
        assert_eq!("literal".parse::<Denominator>().unwrap(), Denominator::Literal);
        assert!("other".parse::<Denominator>().is_err());
    }
}
