use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MiningIndex, TopK};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEntry {
    pub query: usize,
    pub positive: usize,
    pub distance: f64,
}

/// Query -> mined positive, in query order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairTable {
    entries: Vec<PairEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    query_video_id: String,
    query_frame_id: u64,
    pos_video_id: String,
    pos_frame_id: u64,
    distance: f64,
}

/// One line of a ranked (Top-K) listing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedEntry {
    pub query_video_id: String,
    pub query_frame_id: u64,
    pub rank: usize,
    pub pos_video_id: String,
    pub pos_frame_id: u64,
    pub distance: f64,
}

impl PairTable {
    pub fn new(entries: Vec<PairEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positive assigned to `query`, if any.
    pub fn positive_of(&self, query: usize) -> Option<usize> {
        match self.entries.get(query) {
            Some(e) if e.query == query => Some(e.positive),
            _ => self.entries.iter().find(|e| e.query == query).map(|e| e.positive),
        }
    }

    /// Checks the cross-video constraint and that each stored distance is
    /// the index's own distance between the two rows.
    pub fn verify(&self, index: &MiningIndex) -> Result<()> {
        for e in &self.entries {
            if index.video_of(e.query) == index.video_of(e.positive) {
                return Err(Error::InvalidRecord(format!(
                    "pair {} -> {} stays within one video",
                    e.query, e.positive
                )));
            }
            if index.distance(e.query, e.positive) != e.distance {
                return Err(Error::InvalidRecord(format!(
                    "pair {} -> {} stores distance {} but rows are {} apart",
                    e.query,
                    e.positive,
                    e.distance,
                    index.distance(e.query, e.positive)
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, store: &EmbeddingStore, mut w: W) -> Result<()> {
        let meta = store.meta();
        for e in &self.entries {
            let line = PairLine {
                query_video_id: meta[e.query].video_id.clone(),
                query_frame_id: meta[e.query].frame_id,
                pos_video_id: meta[e.positive].video_id.clone(),
                pos_frame_id: meta[e.positive].frame_id,
                distance: e.distance,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a pair file, resolving `(video_id, frame_id)` keys to the
    /// first matching row of `store`.
    pub fn read_jsonl<R: BufRead>(store: &EmbeddingStore, reader: R) -> Result<Self> {
        let mut lookup = std::collections::HashMap::with_capacity(store.len());
        for (i, m) in store.meta().iter().enumerate() {
            lookup.entry((m.video_id.as_str(), m.frame_id)).or_insert(i);
        }
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: n + 1, message };
            let p: PairLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let resolve = |v: &str, f: u64| {
                lookup
                    .get(&(v, f))
                    .copied()
                    .ok_or_else(|| parse_err(format!("unknown row {v}:{f}")))
            };
            entries.push(PairEntry {
                query: resolve(&p.query_video_id, p.query_frame_id)?,
                positive: resolve(&p.pos_video_id, p.pos_frame_id)?,
                distance: p.distance,
            });
        }
        Ok(Self { entries })
    }
}

pub fn ranked_entries(store: &EmbeddingStore, query: usize, top: &TopK) -> Vec<RankedEntry> {
    let meta = store.meta();
    top.neighbors
        .iter()
        .enumerate()
        .map(|(r, n)| RankedEntry {
            query_video_id: meta[query].video_id.clone(),
            query_frame_id: meta[query].frame_id,
            rank: r + 1,
            pos_video_id: meta[n.row].video_id.clone(),
            pos_frame_id: meta[n.row].frame_id,
            distance: n.distance,
        })
        .collect()
}
