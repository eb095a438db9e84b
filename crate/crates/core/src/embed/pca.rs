use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::INPUT_DIM;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 14;

/// Rows per accumulation shard. Fixed so that the reduction tree, and with
/// it every rounding step, does not depend on the thread count.
const SHARD_ROWS: usize = 2048;

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub dim: usize,
    /// Subtract the mean before projecting. When false the model is the
    /// literal `p = M^T v` with `M` taken from the uncentered second moment.
    pub center: bool,
    /// Fit on a seeded uniform subsample of this many rows.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            center: true,
            subsample: None,
            seed: 0,
        }
    }
}

/// A fitted projection: `project(v) = M^T (v - mean)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaModel {
    pub dim: usize,
    pub centered: bool,
    pub mean: Vec<f64>,
    /// `INPUT_DIM x dim`, row-major; column `d` is the d-th principal direction.
    pub projection: Vec<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component(&self, d: usize) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.projection[j * self.dim + d];
        }
        out
    }

    pub fn project(&self, v: &[f64; INPUT_DIM]) -> Result<Vec<f64>> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        let mut out = vec![0.0; self.dim];
        for j in 0..INPUT_DIM {
            let c = v[j] - self.mean[j];
            let row = &self.projection[j * self.dim..(j + 1) * self.dim];
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * c;
            }
        }
        Ok(out)
    }

    pub fn project_batch(&self, vs: &[[f64; INPUT_DIM]]) -> Result<Vec<Vec<f64>>> {
        vs.par_iter().map(|v| self.project(v)).collect()
    }

    /// `mean + M p`.
    pub fn reconstruct(&self, p: &[f64]) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.projection[j * self.dim..(j + 1) * self.dim];
            *o = self.mean[j] + row.iter().zip(p).map(|(m, x)| m * x).sum::<f64>();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > INPUT_DIM {
            return Err(Error::param(format!("model dim {} outside 1..=42", self.dim)));
        }
        if self.mean.len() != INPUT_DIM {
            return Err(Error::DimMismatch {
                expected: INPUT_DIM,
                found: self.mean.len(),
            });
        }
        if self.projection.len() != INPUT_DIM * self.dim {
            return Err(Error::DimMismatch {
                expected: INPUT_DIM * self.dim,
                found: self.projection.len(),
            });
        }
        if self.explained_variance.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: self.explained_variance.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: PcaModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

type Moments = (Vec<f64>, Vec<f64>);

fn tree_reduce(mut parts: Vec<Moments>) -> Moments {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((mut s, mut m)) = it.next() {
            if let Some((s2, m2)) = it.next() {
                s.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
                m.iter_mut().zip(&m2).for_each(|(a, b)| *a += b);
            }
            next.push((s, m));
        }
        parts = next;
    }
    parts
        .pop()
        .unwrap_or_else(|| (vec![0.0; INPUT_DIM], vec![0.0; INPUT_DIM * INPUT_DIM]))
}

/// Per-shard sums of `v - shift` and of its outer product, tree-reduced.
fn moments(vectors: &[[f64; INPUT_DIM]], shift: &[f64; INPUT_DIM]) -> Moments {
    let parts: Vec<Moments> = vectors
        .par_chunks(SHARD_ROWS)
        .map(|chunk| {
            let mut s = vec![0.0; INPUT_DIM];
            let mut m = vec![0.0; INPUT_DIM * INPUT_DIM];
            let mut c = [0.0; INPUT_DIM];
            for v in chunk {
                for j in 0..INPUT_DIM {
                    c[j] = v[j] - shift[j];
                    s[j] += c[j];
                }
                for a in 0..INPUT_DIM {
                    let row = &mut m[a * INPUT_DIM..a * INPUT_DIM + a + 1];
                    for (b, slot) in row.iter_mut().enumerate() {
                        *slot += c[a] * c[b];
                    }
                }
            }
            (s, m)
        })
        .collect();
    tree_reduce(parts)
}

/// Fits a PCA model. Components are ordered by decreasing variance and each
/// column's largest-magnitude entry is made positive.
pub fn fit_pca(vectors: &[[f64; INPUT_DIM]], opts: &FitOptions) -> Result<PcaModel> {
    let dim = opts.dim;
    if dim == 0 || dim > INPUT_DIM {
        return Err(Error::param(format!("dim {dim} outside 1..=42")));
    }
    let subsampled;
    let data: &[[f64; INPUT_DIM]] = match opts.subsample {
        Some(n) if n < vectors.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = rand::seq::index::sample(&mut rng, vectors.len(), n).into_vec();
            idx.sort_unstable();
            subsampled = idx.into_iter().map(|i| vectors[i]).collect::<Vec<_>>();
            &subsampled
        }
        _ => vectors,
    };
    let n = data.len();
    if dim > n {
        return Err(Error::param(format!("dim {dim} exceeds sample count {n}")));
    }
    if data.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("fit input"));
    }

    let zero = [0.0; INPUT_DIM];
    let mut mean = [0.0; INPUT_DIM];
    let second = if opts.center {
        let (sum, _) = moments(data, &zero);
        for (m, s) in mean.iter_mut().zip(&sum) {
            *m = s / n as f64;
        }
        moments(data, &mean).1
    } else {
        moments(data, &zero).1
    };
    let denom = if opts.center { (n.max(2) - 1) as f64 } else { n as f64 };
    let cov = DMatrix::from_fn(INPUT_DIM, INPUT_DIM, |a, b| {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        second[hi * INPUT_DIM + lo] / denom
    });

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..INPUT_DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-12 * INPUT_DIM as f64;
    let mut projection = vec![0.0; INPUT_DIM * dim];
    let mut explained_variance = Vec::with_capacity(dim);
    let mut rank = 0;
    for (d, &k) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda > tol {
            rank += 1;
        }
        explained_variance.push(if lambda > tol { lambda } else { 0.0 });
        let col = eig.eigenvectors.column(k);
        let pivot = (0..INPUT_DIM)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..INPUT_DIM {
            projection[j * dim + d] = sign * col[j];
        }
    }
    if rank < dim {
        log::warn!("data rank {rank} is below requested dim {dim}; trailing components carry zero variance");
    }

    Ok(PcaModel {
        dim,
        centered: opts.center,
        mean: if opts.center { mean.to_vec() } else { zero.to_vec() },
        projection,
        explained_variance,
    })
}
