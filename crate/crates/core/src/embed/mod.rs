//! Pose embeddings: flattened keypoints reduced by PCA to a small
//! D-dimensional space, plus the on-disk embedding cache.

mod cache;
mod pca;

pub use cache::{load_cache, load_cache_with_dim, save_cache, write_cache, read_cache, CACHE_MAGIC, CACHE_VERSION};
pub use pca::{fit_pca, FitOptions, PcaModel, DEFAULT_DIM};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{KeypointRecord, Keypoints, RecordSet, NUM_JOINTS};

pub const INPUT_DIM: usize = 2 * NUM_JOINTS;

/// `[x1, y1, x2, y2, ..., x21, y21]` in joint order.
pub fn flatten(keypoints: &Keypoints) -> [f64; INPUT_DIM] {
    let mut out = [0.0; INPUT_DIM];
    for (j, [x, y]) in keypoints.iter().enumerate() {
        out[2 * j] = *x;
        out[2 * j + 1] = *y;
    }
    out
}

pub fn unflatten(v: &[f64; INPUT_DIM]) -> Keypoints {
    let mut kp = [[0.0; 2]; NUM_JOINTS];
    for (j, p) in kp.iter_mut().enumerate() {
        *p = [v[2 * j], v[2 * j + 1]];
    }
    kp
}

pub fn flatten_record(record: &KeypointRecord) -> [f64; INPUT_DIM] {
    flatten(&record.keypoints)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowMeta {
    pub video_id: String,
    pub frame_id: u64,
}

/// Row-major `count x dim` embeddings with per-row provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rows: Vec<f32>,
    meta: Vec<RowMeta>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, rows: Vec<f32>, meta: Vec<RowMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("embedding dim must be positive"));
        }
        if rows.len() != dim * meta.len() {
            return Err(Error::DimMismatch {
                expected: dim * meta.len(),
                found: rows.len(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding row"));
        }
        Ok(Self { dim, rows, meta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    /// Index of the first row carrying `(video_id, frame_id)`.
    pub fn find(&self, video_id: &str, frame_id: u64) -> Option<usize> {
        self.meta
            .iter()
            .position(|m| m.video_id == video_id && m.frame_id == frame_id)
    }
}

/// Projects every record of `set` into the model's embedding space.
pub fn embed_records(model: &PcaModel, set: &RecordSet) -> Result<EmbeddingStore> {
    let dim = model.dim();
    let projected: Vec<Vec<f64>> = set
        .records()
        .par_iter()
        .map(|r| model.project(&flatten_record(r)))
        .collect::<Result<_>>()?;
    let rows = projected
        .iter()
        .flat_map(|p| p.iter().map(|&v| v as f32))
        .collect();
    let meta = set
        .records()
        .iter()
        .map(|r| RowMeta {
            video_id: r.video_id.clone(),
            frame_id: r.frame_id,
        })
        .collect();
    EmbeddingStore::new(dim, rows, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_layout() {
        let mut kp = [[0.0; 2]; NUM_JOINTS];
        assert!(flatten(&kp).iter().all(|&v| v == 0.0));
        kp[0] = [0.1, 0.2];
        let v = flatten(&kp);
        assert_eq!(v[0], 0.1);
        assert_eq!(v[1], 0.2);
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut kp = [[0.0; 2]; NUM_JOINTS];
            for p in kp.iter_mut() {
                *p = [rng.random(), rng.random()];
            }
            assert_eq!(unflatten(&flatten(&kp)), kp);
        }
    }

    #[test]
    fn store_rejects_bad_shapes() {
        let meta = vec![RowMeta {
            video_id: "a".into(),
            frame_id: 0,
        }];
        assert!(EmbeddingStore::new(2, vec![0.0; 3], meta.clone()).is_err());
        assert!(EmbeddingStore::new(2, vec![0.0, f32::NAN], meta.clone()).is_err());
        assert!(EmbeddingStore::new(2, vec![0.0, 1.0], meta).is_ok());
    }
}
