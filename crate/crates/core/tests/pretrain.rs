use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posemine::embed::{fit_pca, flatten_record, FitOptions};
use posemine::pretrain::{
    adaptive_weights, batch_objective, build_batch, parameter_gradient, weighted_ntxent, BatchWeights, Denominator,
    EncoderModel, EncoderSpec, StepContext, TrainConfig, TrainData,
};
use posemine::synth::{generate_corpus, CorpusConfig};

fn random_features(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> Vec<f64> {
    (0..b * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_weights(rng: &mut ChaCha8Rng, b: usize) -> BatchWeights {
    let points: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    adaptive_weights(&points).unwrap()
}

/// Direct per-anchor evaluation of the weighted loss.
fn scalar_loss(z: &[f64], dim: usize, w: &BatchWeights, tau: f64, denom: Denominator) -> f64 {
    let b = z.len() / dim;
    let n = b / 2;
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let cos = |a: &[f64], c: &[f64]| {
        let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nc)
    };
    let mut total = 0.0;
    for i in 0..b {
        let p = (i + n) % b;
        let num = (w.pos[i % n] * cos(row(i), row(p)) / tau).exp();
        let mut den = if denom == Denominator::Standard { num } else { 0.0 };
        for k in 0..b {
            if k != i && k != p {
                den += (w.neg[i * b + k] * cos(row(i), row(k)) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / b as f64
}

#[test]
fn weighted_loss_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for &b in &[4usize, 6, 8, 16, 32] {
        for denom in [Denominator::Standard, Denominator::Literal] {
            for _ in 0..20 {
                let dim = rng.random_range(2..10);
                let tau = rng.random_range(0.05..2.0);
                let z = random_features(&mut rng, b, dim);
                let w = random_weights(&mut rng, b);
                let got = weighted_ntxent(&z, dim, &w, tau, denom).unwrap().loss;
                let want = scalar_loss(&z, dim, &w, tau, denom);
                assert!((got - want).abs() < 1e-9, "{b} {denom:?}: {got} vs {want}");
            }
        }
    }
}

/// Relabels samples with `perm` applied to pair indices, optionally
/// swapping the anchor and positive halves.
fn permute(z: &[f64], w: &BatchWeights, dim: usize, perm: &[usize], swap: bool) -> (Vec<f64>, BatchWeights, Vec<usize>) {
    let b = w.batch;
    let n = b / 2;
    // new sample s comes from old sample src[s]
    let src: Vec<usize> = (0..b)
        .map(|s| {
            let (half, j) = (s / n, s % n);
            let half = if swap { 1 - half } else { half };
            half * n + perm[j]
        })
        .collect();
    let z2: Vec<f64> = src.iter().flat_map(|&o| z[o * dim..(o + 1) * dim].to_vec()).collect();
    let mut neg = vec![0.0; b * b];
    for s in 0..b {
        for t in 0..b {
            neg[s * b + t] = w.neg[src[s] * b + src[t]];
        }
    }
    let pos = (0..n).map(|j| w.pos[perm[j]]).collect();
    (z2, BatchWeights { pos, neg, batch: b }, src)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn batch_permutation_permutes_anchor_losses(seed in any::<u64>(), n in 2usize..12, swap in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 2 * n;
        let dim = 5;
        let z = random_features(&mut rng, b, dim);
        let w = random_weights(&mut rng, b);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (z2, w2, src) = permute(&z, &w, dim, &perm, swap);
        let a = weighted_ntxent(&z, dim, &w, 0.5, Denominator::Standard).unwrap();
        let p = weighted_ntxent(&z2, dim, &w2, 0.5, Denominator::Standard).unwrap();
        prop_assert!((a.loss - p.loss).abs() < 1e-12);
        for s in 0..b {
            prop_assert!((p.per_anchor[s] - a.per_anchor[src[s]]).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_gradient_matches_central_differences(seed in any::<u64>(), half in prop::sample::select(vec![2usize, 4, 8]), literal in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 2 * half;
        let dim = 4;
        let denom = if literal { Denominator::Literal } else { Denominator::Standard };
        let z = random_features(&mut rng, b, dim);
        let w = random_weights(&mut rng, b);
        let g = weighted_ntxent(&z, dim, &w, 0.5, denom).unwrap().grad;
        let h = 1e-5;
        let mut num = vec![0.0; z.len()];
        for j in 0..z.len() {
            let mut up = z.clone();
            up[j] += h;
            let mut dn = z.clone();
            dn[j] -= h;
            num[j] = (weighted_ntxent(&up, dim, &w, 0.5, denom).unwrap().loss
                - weighted_ntxent(&dn, dim, &w, 0.5, denom).unwrap().loss)
                / (2.0 * h);
        }
        let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
    }
}

#[test]
fn scaling_one_feature_leaves_loss_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 6;
    let mut z = random_features(&mut rng, 8, dim);
    let w = random_weights(&mut rng, 8);
    let before = weighted_ntxent(&z, dim, &w, 0.5, Denominator::Standard).unwrap().loss;
    for v in &mut z[3 * dim..4 * dim] {
        *v *= 3.0;
    }
    let after = weighted_ntxent(&z, dim, &w, 0.5, Denominator::Standard).unwrap().loss;
    assert!((before - after).abs() < 1e-9);
}

#[test]
fn pipeline_gradient_matches_central_differences_at_coarse_step() {
    let corpus = generate_corpus(&CorpusConfig {
        videos: 4,
        frames: 6,
        image_size: 8,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let data = TrainData::new(&corpus.images, &corpus.records).unwrap();
    let vectors: Vec<_> = corpus.records.records().iter().map(flatten_record).collect();
    let pca = fit_pca(&vectors, &FitOptions { dim: 5, ..Default::default() }).unwrap();
    let spec = EncoderSpec {
        input: 64,
        hidden: vec![10],
        feature: 6,
        projection: 4,
    };
    let cfg = TrainConfig {
        pairs_per_batch: 4,
        encoder: spec.clone(),
        ..TrainConfig::default()
    };
    let ctx = StepContext::from_config(&cfg, Some(pca)).unwrap();
    let model = EncoderModel::init(spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = build_batch(&data, &[0, 7, 13, 19], &[6, 12, 18, 1], &cfg.augment, &mut rng).unwrap();
    let (_, analytic) = parameter_gradient(&model, &batch, &ctx).unwrap();
    let theta = model.params_flat();
    let h = 1e-4;
    let mut probe = model.clone();
    let mut diff = 0.0;
    let mut norm: f64 = 0.0;
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] += h;
        probe.set_params_flat(&t).unwrap();
        let up = batch_objective(&probe, &batch, &ctx).unwrap().0.loss;
        t[j] -= 2.0 * h;
        probe.set_params_flat(&t).unwrap();
        let dn = batch_objective(&probe, &batch, &ctx).unwrap().0.loss;
        let fd = (up - dn) / (2.0 * h);
        diff += (fd - analytic[j]).powi(2);
        norm += analytic[j].powi(2);
    }
    let rel = diff.sqrt() / norm.sqrt();
    assert!(rel < 1e-4, "relative error {rel}");
}
