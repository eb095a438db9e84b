//! Pose-estimation metrics and mining-quality statistics.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{flatten, INPUT_DIM};
use crate::error::{Error, Result};
use crate::ingest::{RecordSet, NUM_JOINTS};
use crate::mine::{MiningIndex, NeighborSearch, PairTable};

pub type Joints3D = [[f64; 3]; NUM_JOINTS];

/// 3D poses in millimeters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseSet3D {
    pub poses: Vec<Joints3D>,
}

#[derive(Serialize, Deserialize)]
struct PoseLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_id: Option<u64>,
    joints: Vec<[f64; 3]>,
}

impl PoseSet3D {
    pub fn new(poses: Vec<Joints3D>) -> Result<Self> {
        if poses.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("3D joint"));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Line-delimited `{"joints": [[x, y, z] x 21]}` objects; optional
    /// `video_id` / `frame_id` fields are accepted and ignored.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut poses = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: n + 1, message };
            let p: PoseLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let joints: Joints3D = p
                .joints
                .try_into()
                .map_err(|j: Vec<_>| err(format!("joint count {} (expected {NUM_JOINTS})", j.len())))?;
            poses.push(joints);
        }
        Self::new(poses)
    }

    pub fn write_jsonl<W: Write>(&self, ids: Option<&[(String, u64)]>, mut w: W) -> Result<()> {
        for (i, joints) in self.poses.iter().enumerate() {
            let line = PoseLine {
                video_id: ids.map(|ids| ids[i].0.clone()),
                frame_id: ids.map(|ids| ids[i].1),
                joints: joints.to_vec(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn joint_errors(pred: &PoseSet3D, gt: &PoseSet3D, root_relative: bool) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let mut out = Vec::with_capacity(gt.len() * NUM_JOINTS);
    for (p, g) in pred.poses.iter().zip(&gt.poses) {
        let (pr, gr) = if root_relative { (p[0], g[0]) } else { ([0.0; 3], [0.0; 3]) };
        for j in 0..NUM_JOINTS {
            let d: f64 = (0..3)
                .map(|c| ((p[j][c] - pr[c]) - (g[j][c] - gr[c])).powi(2))
                .sum();
            out.push(d.sqrt());
        }
    }
    Ok(out)
}

/// Mean per-joint Euclidean error. With `root_relative`, both sets are
/// first translated so that the wrist sits at the origin.
pub fn mpjpe(pred: &PoseSet3D, gt: &PoseSet3D, root_relative: bool) -> Result<f64> {
    let errs = joint_errors(pred, gt, root_relative)?;
    if errs.is_empty() {
        return Err(Error::param("mpjpe of an empty pose set"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckRange {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for PckRange {
    fn default() -> Self {
        Self {
            lo: 20.0,
            hi: 50.0,
            steps: 31,
        }
    }
}

impl PckRange {
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        if self.steps < 2 || !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::param(format!(
                "empty threshold range {}..{} with {} steps",
                self.lo, self.hi, self.steps
            )));
        }
        let step = (self.hi - self.lo) / (self.steps - 1) as f64;
        Ok((0..self.steps).map(|i| self.lo + step * i as f64).collect())
    }
}

/// Fraction of joints within each threshold.
pub fn pck_curve(pred: &PoseSet3D, gt: &PoseSet3D, range: &PckRange, root_relative: bool) -> Result<Vec<f64>> {
    let thresholds = range.thresholds()?;
    let mut errs = joint_errors(pred, gt, root_relative)?;
    if errs.is_empty() {
        return Err(Error::param("pck of an empty pose set"));
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| errs.partition_point(|&e| e <= t) as f64 / n)
        .collect())
}

/// Trapezoidal area under the PCK curve divided by the threshold span.
pub fn pck_auc(pred: &PoseSet3D, gt: &PoseSet3D, range: &PckRange, root_relative: bool) -> Result<f64> {
    let curve = pck_curve(pred, gt, range, root_relative)?;
    let step = (range.hi - range.lo) / (range.steps - 1) as f64;
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
    Ok(area / (range.hi - range.lo))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub root_relative: bool,
    pub mpjpe_mm: f64,
    pub pck_auc: f64,
    pub pck_lo_mm: f64,
    pub pck_hi_mm: f64,
}

pub fn evaluate(pred: &PoseSet3D, gt: &PoseSet3D, root_relative: bool) -> Result<EvalReport> {
    let range = PckRange::default();
    Ok(EvalReport {
        count: gt.len(),
        root_relative,
        mpjpe_mm: mpjpe(pred, gt, root_relative)?,
        pck_auc: pck_auc(pred, gt, &range, root_relative)?,
        pck_lo_mm: range.lo,
        pck_hi_mm: range.hi,
    })
}

fn raw_distance(a: &[f64; INPUT_DIM], b: &[f64; INPUT_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningQuality {
    pub pairs: usize,
    /// Mean raw-keypoint distance of the mined pairs.
    pub mined_mean: f64,
    /// Mean over the same number of random cross-video pairs.
    pub baseline_mean: f64,
    pub ratio: f64,
}

/// Compares mined pairs against random cross-video pairs in raw 42-dim
/// keypoint space. Row ids in `pairs` index `records`.
pub fn mining_quality(records: &RecordSet, pairs: &PairTable, seed: u64) -> MiningQuality {
    let flat: Vec<[f64; INPUT_DIM]> = records.records().iter().map(|r| flatten(&r.keypoints)).collect();
    let n = pairs.len();
    let mined_mean = if n == 0 {
        0.0
    } else {
        pairs
            .entries()
            .iter()
            .map(|e| raw_distance(&flat[e.query], &flat[e.positive]))
            .sum::<f64>()
            / n as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs = records.records();
    let mut baseline_sum = 0.0;
    let mut drawn = 0;
    if records.num_videos() >= 2 {
        while drawn < n {
            let a = rng.random_range(0..recs.len());
            let b = rng.random_range(0..recs.len());
            if recs[a].video_id == recs[b].video_id {
                continue;
            }
            baseline_sum += raw_distance(&flat[a], &flat[b]);
            drawn += 1;
        }
    }
    let baseline_mean = if drawn == 0 { f64::NAN } else { baseline_sum / drawn as f64 };
    let ratio = if mined_mean == 0.0 { 0.0 } else { mined_mean / baseline_mean };
    MiningQuality {
        pairs: n,
        mined_mean,
        baseline_mean,
        ratio,
    }
}

/// Mean raw-keypoint distance between each query and its rank-`k`
/// neighbor, for each requested `k`. Row ids in `index` index `records`.
pub fn rank_distance_profile(
    records: &RecordSet,
    index: &MiningIndex,
    search: &dyn NeighborSearch,
    queries: &[usize],
    ks: &[usize],
) -> Result<Vec<f64>> {
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let lists = search.topk_batch(index, queries, kmax)?;
    let flat: Vec<[f64; INPUT_DIM]> = records.records().iter().map(|r| flatten(&r.keypoints)).collect();
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::param("rank must be at least 1"));
            }
            let mut sum = 0.0;
            let mut count = 0;
            for (&q, list) in queries.iter().zip(&lists) {
                if let Some(nb) = list.neighbors.get(k - 1) {
                    sum += raw_distance(&flat[q], &flat[nb.row]);
                    count += 1;
                }
            }
            Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
        })
        .collect()
}
