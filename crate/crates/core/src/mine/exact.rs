use rayon::prelude::*;

use super::{check_query, sq_dist, Bounded, Candidate, MiningIndex, NeighborSearch, TopK};
use crate::error::Result;

const QUERY_BLOCK: usize = 32;
const CANDIDATE_TILE: usize = 1024;

/// Exhaustive scan, tiled over candidates and parallel over query blocks.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactSearch;

impl NeighborSearch for ExactSearch {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn topk(&self, index: &MiningIndex, query: usize, k: usize) -> Result<TopK> {
        check_query(index, query, k)?;
        let qpos = index.position_of(query);
        let q = index.point(qpos);
        let mut best = Bounded::new(k);
        for span in index.cross_video_spans(index.video_of(query)) {
            for pos in span {
                best.push(Candidate {
                    sq: sq_dist(q, index.point(pos)),
                    pos,
                });
            }
        }
        Ok(best.finish(index))
    }

    fn topk_batch(&self, index: &MiningIndex, queries: &[usize], k: usize) -> Result<Vec<TopK>> {
        for &q in queries {
            check_query(index, q, k)?;
        }
        let blocks: Vec<Vec<TopK>> = queries
            .par_chunks(QUERY_BLOCK)
            .map(|block| scan_block(index, block, k))
            .collect();
        Ok(blocks.into_iter().flatten().collect())
    }
}

fn scan_block(index: &MiningIndex, block: &[usize], k: usize) -> Vec<TopK> {
    let qpos: Vec<usize> = block.iter().map(|&q| index.position_of(q)).collect();
    let qvid: Vec<u32> = qpos.iter().map(|&p| index.video_of_pos(p)).collect();
    let mut best: Vec<Bounded> = block.iter().map(|_| Bounded::new(k)).collect();
    let n = index.len();
    let mut start = 0;
    while start < n {
        let end = (start + CANDIDATE_TILE).min(n);
        for (i, &p) in qpos.iter().enumerate() {
            let q = index.point(p);
            let heap = &mut best[i];
            for pos in start..end {
                if index.video_of_pos(pos) == qvid[i] {
                    continue;
                }
                heap.push(Candidate {
                    sq: sq_dist(q, index.point(pos)),
                    pos,
                });
            }
        }
        start = end;
    }
    best.into_iter().map(|b| b.finish(index)).collect()
}
