//! Cross-video similar-hand mining.
//!
//! For a query row the positive is the nearest embedding (Euclidean) among
//! rows from every *other* video. Rows are regrouped by video so that the
//! excluded set is one contiguous span, and ties resolve to the smallest
//! `(video ordinal, frame_id, row)` key, with video ordinals assigned in
//! sorted `video_id` order.

mod exact;
mod ivf;
mod table;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

pub use exact::ExactSearch;
pub use ivf::IvfSearch;
pub use table::{PairEntry, PairTable, RankedEntry, ranked_entries};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Row id in the source store.
    pub row: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub neighbors: Vec<Neighbor>,
    /// Fewer than K cross-video candidates existed.
    pub short: bool,
}

/// Immutable, video-grouped view of an [`EmbeddingStore`].
#[derive(Debug)]
pub struct MiningIndex {
    store: EmbeddingStore,
    /// Grouped position -> store row.
    order: Vec<usize>,
    /// Store row -> grouped position.
    position: Vec<usize>,
    /// Embeddings in grouped order, widened to f64.
    data: Vec<f64>,
    video_of: Vec<u32>,
    video_offsets: Vec<usize>,
    video_ids: Vec<String>,
}

pub fn build_index(store: EmbeddingStore) -> Result<MiningIndex> {
    if store.is_empty() {
        return Err(Error::param("cannot index an empty embedding store"));
    }
    let meta = store.meta();
    let mut order: Vec<usize> = (0..store.len()).collect();
    order.sort_by(|&a, &b| {
        (&meta[a].video_id, meta[a].frame_id, a).cmp(&(&meta[b].video_id, meta[b].frame_id, b))
    });
    let mut position = vec![0; store.len()];
    let mut video_ids: Vec<String> = Vec::new();
    let mut video_offsets = Vec::new();
    let mut video_of = Vec::with_capacity(store.len());
    for (pos, &row) in order.iter().enumerate() {
        position[row] = pos;
        if video_ids.last() != Some(&meta[row].video_id) {
            video_ids.push(meta[row].video_id.clone());
            video_offsets.push(pos);
        }
        video_of.push((video_ids.len() - 1) as u32);
    }
    video_offsets.push(store.len());
    let dim = store.dim();
    let mut data = Vec::with_capacity(store.len() * dim);
    for &row in &order {
        data.extend(store.row(row).iter().map(|&v| v as f64));
    }
    Ok(MiningIndex {
        store,
        order,
        position,
        data,
        video_of,
        video_offsets,
        video_ids,
    })
}

impl MiningIndex {
    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn num_videos(&self) -> usize {
        self.video_ids.len()
    }

    pub fn video_ids(&self) -> &[String] {
        &self.video_ids
    }

    /// `video_offsets()[v]..video_offsets()[v + 1]` are video `v`'s grouped positions.
    pub fn video_offsets(&self) -> &[usize] {
        &self.video_offsets
    }

    /// Video ordinal of a store row.
    pub fn video_of(&self, row: usize) -> usize {
        self.video_of[self.position[row]] as usize
    }

    pub fn row_at(&self, pos: usize) -> usize {
        self.order[pos]
    }

    pub fn position_of(&self, row: usize) -> usize {
        self.position[row]
    }

    pub(crate) fn point(&self, pos: usize) -> &[f64] {
        let d = self.dim();
        &self.data[pos * d..(pos + 1) * d]
    }

    pub(crate) fn video_of_pos(&self, pos: usize) -> u32 {
        self.video_of[pos]
    }

    /// Grouped positions outside video `v`, as at most two spans.
    pub(crate) fn cross_video_spans(&self, v: usize) -> [std::ops::Range<usize>; 2] {
        [
            0..self.video_offsets[v],
            self.video_offsets[v + 1]..self.len(),
        ]
    }

    pub fn cross_video_count(&self, row: usize) -> usize {
        let v = self.video_of(row);
        self.len() - (self.video_offsets[v + 1] - self.video_offsets[v])
    }

    /// Euclidean distance between two store rows as the search computes it.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        sq_dist(self.point(self.position[a]), self.point(self.position[b])).sqrt()
    }

    pub fn find(&self, video_id: &str, frame_id: u64) -> Option<usize> {
        self.store.find(video_id, frame_id)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Ordering key for candidates: squared distance, then grouped position.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Candidate {
    pub sq: f64,
    pub pos: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq.total_cmp(&other.sq).then(self.pos.cmp(&other.pos))
    }
}

/// Keeps the `k` smallest candidates seen.
pub(crate) struct Bounded {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl Bounded {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Current admission bound; candidates above it can be skipped.
    #[inline]
    pub fn worst(&self) -> Option<Candidate> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().copied()
        }
    }

    #[inline]
    pub fn push(&mut self, c: Candidate) {
        match self.worst() {
            None => self.heap.push(c),
            Some(w) if c < w => {
                self.heap.pop();
                self.heap.push(c);
            }
            _ => {}
        }
    }

    pub fn finish(self, index: &MiningIndex) -> TopK {
        let k = self.k;
        let sorted = self.heap.into_sorted_vec();
        let short = sorted.len() < k;
        TopK {
            neighbors: sorted
                .into_iter()
                .map(|c| Neighbor {
                    row: index.row_at(c.pos),
                    distance: c.sq.sqrt(),
                })
                .collect(),
            short,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Coarse cells for the quantized search; `None` picks `sqrt(n)`.
    pub nlist: Option<usize>,
    pub nprobe: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            nlist: None,
            nprobe: 8,
            seed: 0,
        }
    }
}

/// A nearest-neighbor strategy over a [`MiningIndex`].
pub trait NeighborSearch: Send + Sync {
    fn name(&self) -> &'static str;

    /// Builds any auxiliary structure. Must be called before querying.
    fn prepare(&mut self, _index: &MiningIndex, _cfg: &SearchConfig) -> Result<()> {
        Ok(())
    }

    /// The `k` nearest cross-video rows of store row `query`.
    fn topk(&self, index: &MiningIndex, query: usize, k: usize) -> Result<TopK>;

    /// `topk` for many queries; output order follows `queries`.
    fn topk_batch(&self, index: &MiningIndex, queries: &[usize], k: usize) -> Result<Vec<TopK>> {
        queries.par_iter().map(|&q| self.topk(index, q, k)).collect()
    }
}

pub fn search_registry() -> Registry<dyn NeighborSearch> {
    let mut reg: Registry<dyn NeighborSearch> = Registry::new("search strategy");
    reg.register("exact", || Box::new(ExactSearch));
    reg.register("ivf", || Box::new(IvfSearch::default()));
    reg
}

fn check_query(index: &MiningIndex, query: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("K must be at least 1"));
    }
    if query >= index.len() {
        return Err(Error::param(format!("query row {query} out of range")));
    }
    if index.cross_video_count(query) == 0 {
        return Err(Error::NoCrossVideoCandidates(query));
    }
    Ok(())
}

/// Nearest cross-video row of `query` (exact).
pub fn mine_positive(index: &MiningIndex, query: usize) -> Result<Neighbor> {
    Ok(ExactSearch.topk(index, query, 1)?.neighbors[0])
}

/// The `k` nearest cross-video rows of `query`, non-decreasing distance (exact).
pub fn topk(index: &MiningIndex, query: usize, k: usize) -> Result<TopK> {
    ExactSearch.topk(index, query, k)
}

/// Top-1 positive for every row with the exact search.
pub fn mine_all(index: &MiningIndex) -> Result<PairTable> {
    mine_all_with(index, &ExactSearch)
}

pub fn mine_all_with(index: &MiningIndex, search: &dyn NeighborSearch) -> Result<PairTable> {
    let ranked = rank_all_with(index, search, 1)?;
    Ok(PairTable::new(
        ranked
            .into_iter()
            .enumerate()
            .map(|(query, t)| PairEntry {
                query,
                positive: t.neighbors[0].row,
                distance: t.neighbors[0].distance,
            })
            .collect(),
    ))
}

/// Top-`k` lists for every store row, indexed by row.
pub fn rank_all_with(index: &MiningIndex, search: &dyn NeighborSearch, k: usize) -> Result<Vec<TopK>> {
    if index.num_videos() < 2 {
        return Err(Error::NoCrossVideoCandidates(0));
    }
    let queries: Vec<usize> = (0..index.len()).collect();
    search.topk_batch(index, &queries, k)
}
