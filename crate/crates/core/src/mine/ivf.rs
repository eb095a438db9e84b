use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_query, sq_dist, Bounded, Candidate, MiningIndex, NeighborSearch, SearchConfig, TopK};
use crate::error::{Error, Result};

const KMEANS_ITERS: usize = 10;

/// Coarse-quantized search: rows are bucketed by k-means cell and a query
/// scans only its `nprobe` nearest cells, widening until `k` cross-video
/// candidates are found. Approximate unless `nprobe >= nlist`.
#[derive(Clone, Debug, Default)]
pub struct IvfSearch {
    dim: usize,
    nprobe: usize,
    centroids: Vec<f64>,
    /// Grouped positions per cell, ascending.
    lists: Vec<Vec<usize>>,
}

impl IvfSearch {
    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    fn nearest_centroid(&self, p: &[f64]) -> usize {
        (0..self.nlist())
            .map(|c| (sq_dist(p, self.centroid(c)), c))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, c)| c)
            .unwrap()
    }
}

impl NeighborSearch for IvfSearch {
    fn name(&self) -> &'static str {
        "ivf"
    }

    fn prepare(&mut self, index: &MiningIndex, cfg: &SearchConfig) -> Result<()> {
        let n = index.len();
        let nlist = cfg
            .nlist
            .unwrap_or_else(|| (n as f64).sqrt().round() as usize)
            .clamp(1, n);
        if cfg.nprobe == 0 {
            return Err(Error::param("nprobe must be at least 1"));
        }
        self.dim = index.dim();
        self.nprobe = cfg.nprobe;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seeds = rand::seq::index::sample(&mut rng, n, nlist).into_vec();
        self.centroids = seeds.iter().flat_map(|&p| index.point(p).to_vec()).collect();
        self.lists = vec![Vec::new(); nlist];

        let mut assign = vec![0usize; n];
        for _ in 0..KMEANS_ITERS {
            for (pos, a) in assign.iter_mut().enumerate() {
                *a = self.nearest_centroid(index.point(pos));
            }
            let mut sums = vec![0.0; nlist * self.dim];
            let mut counts = vec![0usize; nlist];
            for (pos, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, v) in sums[c * self.dim..(c + 1) * self.dim].iter_mut().zip(index.point(pos)) {
                    *s += v;
                }
            }
            for c in 0..nlist {
                if counts[c] > 0 {
                    for d in 0..self.dim {
                        self.centroids[c * self.dim + d] = sums[c * self.dim + d] / counts[c] as f64;
                    }
                }
            }
        }
        for (pos, a) in assign.iter_mut().enumerate() {
            *a = self.nearest_centroid(index.point(pos));
            self.lists[*a].push(pos);
        }
        Ok(())
    }

    fn topk(&self, index: &MiningIndex, query: usize, k: usize) -> Result<TopK> {
        check_query(index, query, k)?;
        if self.lists.is_empty() {
            return Err(Error::param("ivf search used before prepare"));
        }
        let qpos = index.position_of(query);
        let q = index.point(qpos);
        let qvid = index.video_of_pos(qpos);
        let mut cells: Vec<(f64, usize)> = (0..self.nlist())
            .map(|c| (sq_dist(q, self.centroid(c)), c))
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best = Bounded::new(k);
        let mut seen = 0;
        for (probed, &(_, c)) in cells.iter().enumerate() {
            if probed >= self.nprobe && seen >= k {
                break;
            }
            for &pos in &self.lists[c] {
                if index.video_of_pos(pos) == qvid {
                    continue;
                }
                seen += 1;
                best.push(Candidate {
                    sq: sq_dist(q, index.point(pos)),
                    pos,
                });
            }
        }
        Ok(best.finish(index))
    }
}
