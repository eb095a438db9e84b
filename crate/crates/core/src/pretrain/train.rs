use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::align::{inverse_align, inverse_align_backward};
use super::augment::{apply_augment, AugmentParams, AugmentRanges};
use super::encoder::{flatten_grads, EncoderModel, EncoderSpec, Forward, Momentum};
use super::loss::{weighted_ntxent, Denominator, LossReport};
use super::weights::{weighting_registry, BatchWeights, PairWeighting};
use crate::embed::{flatten, PcaModel};
use crate::error::{Error, Result};
use crate::ingest::{Keypoints, RecordSet};
use crate::mine::{MiningIndex, NeighborSearch, PairTable};
use crate::synth::ImageArchive;

/// Where pair-weight distances are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSpace {
    /// PCA embedding of the augmented keypoints.
    #[default]
    Pca,
    /// Raw 42-dim augmented keypoints.
    Raw,
}

impl FromStr for WeightSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "raw" => Ok(Self::Raw),
            other => Err(Error::Config(format!("unknown weight space `{other}` (expected pca or raw)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `N`: anchors per batch; the batch holds `2N` samples.
    pub pairs_per_batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub augment: AugmentRanges,
    /// Name in the weighting registry: `adaptive` or `uniform`.
    pub weighting: String,
    pub loss_denominator: Denominator,
    pub weight_space: WeightSpace,
    /// Use the K-th ranked cross-video neighbor as the positive.
    pub topk_positives: usize,
    /// Apply inverse geometric alignment to projections.
    pub align: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pairs_per_batch: 128,
            steps: 500,
            learning_rate: 2e-4,
            momentum: 0.9,
            temperature: 0.5,
            seed: 0,
            encoder: EncoderSpec::default(),
            augment: AugmentRanges::default(),
            weighting: "adaptive".into(),
            loss_denominator: Denominator::Standard,
            weight_space: WeightSpace::Pca,
            topk_positives: 1,
            align: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_batch < 2 {
            return Err(Error::Config("pairs_per_batch must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning_rate must be >= 0 and momentum in [0, 1)".into()));
        }
        if self.topk_positives == 0 {
            return Err(Error::Config("topk_positives must be at least 1".into()));
        }
        if !weighting_registry().contains(&self.weighting) {
            return Err(Error::Config(format!("unknown weighting `{}`", self.weighting)));
        }
        self.encoder.validate()?;
        self.augment.validate()
    }
}

/// Images plus the keypoints they were drawn from, row-aligned.
pub struct TrainData<'a> {
    pub images: &'a ImageArchive,
    pub keypoints: Vec<Keypoints>,
}

impl<'a> TrainData<'a> {
    pub fn new(images: &'a ImageArchive, records: &RecordSet) -> Result<Self> {
        if images.len() != records.len() {
            return Err(Error::DimMismatch {
                expected: records.len(),
                found: images.len(),
            });
        }
        if images.height() != images.width() {
            return Err(Error::param("training images must be square"));
        }
        Ok(Self {
            images,
            keypoints: records.records().iter().map(|r| r.keypoints).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Picks the positive for an anchor row.
pub trait PositiveSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn positive(&self, anchor: usize) -> usize;
}

/// Top-1 positives straight from a mined pair table.
pub struct TablePositives {
    rows: Vec<usize>,
}

impl TablePositives {
    pub fn new(table: &PairTable, rows: usize) -> Result<Self> {
        let mut out = vec![usize::MAX; rows];
        for e in table.entries() {
            if e.query < rows {
                out[e.query] = e.positive;
            }
        }
        if let Some(missing) = out.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Config(format!("pair table has no entry for row {missing}")));
        }
        Ok(Self { rows: out })
    }
}

impl PositiveSampler for TablePositives {
    fn name(&self) -> &'static str {
        "top1"
    }

    fn positive(&self, anchor: usize) -> usize {
        self.rows[anchor]
    }
}

/// The K-th ranked cross-video neighbor (or the farthest available when
/// fewer than K exist).
pub struct RankedPositives {
    rank: usize,
    rows: Vec<usize>,
}

impl RankedPositives {
    pub fn build(index: &MiningIndex, search: &dyn NeighborSearch, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::param("rank must be at least 1"));
        }
        const CHUNK: usize = 1024;
        let mut rows = Vec::with_capacity(index.len());
        let queries: Vec<usize> = (0..index.len()).collect();
        for chunk in queries.chunks(CHUNK) {
            for top in search.topk_batch(index, chunk, rank)? {
                rows.push(top.neighbors.last().expect("non-empty top-k").row);
            }
        }
        Ok(Self { rank, rows })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

impl PositiveSampler for RankedPositives {
    fn name(&self) -> &'static str {
        "ranked"
    }

    fn positive(&self, anchor: usize) -> usize {
        self.rows[anchor]
    }
}

/// `2N` augmented samples; sample `i` pairs with `(i + N) mod 2N`.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    /// `2N x pixels`.
    pub images: Array2<f64>,
    /// Keypoints after augmentation.
    pub keypoints: Vec<Keypoints>,
    pub params: Vec<AugmentParams>,
    /// Source rows, anchors first.
    pub rows: Vec<usize>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Augments anchors and positives. Parameters are drawn serially from
/// `rng`; the warps then run in parallel.
pub fn build_batch(
    data: &TrainData<'_>,
    anchors: &[usize],
    positives: &[usize],
    ranges: &AugmentRanges,
    rng: &mut ChaCha8Rng,
) -> Result<TrainBatch> {
    if anchors.len() != positives.len() || anchors.is_empty() {
        return Err(Error::param("anchors and positives must pair up"));
    }
    let rows: Vec<usize> = anchors.iter().chain(positives).copied().collect();
    if let Some(&bad) = rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::param(format!("row {bad} outside training data")));
    }
    let params: Vec<AugmentParams> = rows.iter().map(|_| ranges.sample(rng)).collect();
    let size = data.images.width();
    let warped: Vec<(Vec<f64>, Keypoints)> = rows
        .par_iter()
        .zip(&params)
        .map(|(&r, p)| apply_augment(data.images.image(r), size, &data.keypoints[r], p))
        .collect();
    let mut images = Array2::zeros((rows.len(), size * size));
    let mut keypoints = Vec::with_capacity(rows.len());
    for (i, (img, kp)) in warped.into_iter().enumerate() {
        images.row_mut(i).assign(&ndarray::ArrayView1::from(&img[..]));
        keypoints.push(kp);
    }
    Ok(TrainBatch {
        images,
        keypoints,
        params,
        rows,
    })
}

/// Everything a step needs besides the model and batch.
pub struct StepContext {
    pub weighting: Box<dyn PairWeighting>,
    pub pca: Option<PcaModel>,
    pub weight_space: WeightSpace,
    pub temperature: f64,
    pub denominator: Denominator,
    pub align: bool,
}

impl StepContext {
    pub fn from_config(cfg: &TrainConfig, pca: Option<PcaModel>) -> Result<Self> {
        if cfg.weight_space == WeightSpace::Pca && pca.is_none() && cfg.weighting != "uniform" {
            return Err(Error::Config("weight_space = pca needs a fitted PCA model".into()));
        }
        Ok(Self {
            weighting: weighting_registry().create(&cfg.weighting)?,
            pca,
            weight_space: cfg.weight_space,
            temperature: cfg.temperature,
            denominator: cfg.loss_denominator,
            align: cfg.align,
        })
    }

    pub fn weights(&self, batch: &TrainBatch) -> Result<BatchWeights> {
        let points: Vec<Vec<f64>> = batch
            .keypoints
            .iter()
            .map(|k| {
                let v = flatten(k);
                match (self.weight_space, &self.pca) {
                    (WeightSpace::Pca, Some(pca)) => pca.project(&v),
                    (WeightSpace::Pca, None) => Ok(v.to_vec()),
                    (WeightSpace::Raw, _) => Ok(v.to_vec()),
                }
            })
            .collect::<Result<_>>()?;
        self.weighting.weights(&points)
    }
}

/// Forward pass, alignment and loss for one batch.
pub fn batch_objective(model: &EncoderModel, batch: &TrainBatch, ctx: &StepContext) -> Result<(LossReport, Forward)> {
    let fwd = model.forward(batch.images.view())?;
    let p = model.spec.projection;
    let mut aligned = Vec::with_capacity(batch.len() * p);
    for (row, params) in fwd.projected.outer_iter().zip(&batch.params) {
        let z = row.to_vec();
        if ctx.align {
            aligned.extend(inverse_align(&z, params)?);
        } else {
            aligned.extend(z);
        }
    }
    let weights = ctx.weights(batch)?;
    let report = weighted_ntxent(&aligned, p, &weights, ctx.temperature, ctx.denominator)?;
    Ok((report, fwd))
}

fn projected_gradient(model: &EncoderModel, batch: &TrainBatch, ctx: &StepContext, report: &LossReport) -> Result<Array2<f64>> {
    let p = model.spec.projection;
    let mut g = Array2::zeros((batch.len(), p));
    for (i, params) in batch.params.iter().enumerate() {
        let gi = &report.grad[i * p..(i + 1) * p];
        let back = if ctx.align {
            inverse_align_backward(gi, params)?
        } else {
            gi.to_vec()
        };
        g.row_mut(i).assign(&ndarray::ArrayView1::from(&back[..]));
    }
    Ok(g)
}

/// Loss and flat parameter gradient of the whole pipeline.
pub fn parameter_gradient(model: &EncoderModel, batch: &TrainBatch, ctx: &StepContext) -> Result<(f64, Vec<f64>)> {
    let (report, fwd) = batch_objective(model, batch, ctx)?;
    let g = projected_gradient(model, batch, ctx, &report)?;
    Ok((report.loss, flatten_grads(&model.backward(&fwd.tape, &g))))
}

/// One optimization step; the report describes the model before the update.
pub fn train_step(
    model: &mut EncoderModel,
    opt: &mut Momentum,
    batch: &TrainBatch,
    ctx: &StepContext,
    learning_rate: f64,
) -> Result<LossReport> {
    let (report, fwd) = batch_objective(model, batch, ctx)?;
    let g = projected_gradient(model, batch, ctx, &report)?;
    let grads = model.backward(&fwd.tape, &g);
    opt.step(model, &grads, learning_rate);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mean_pos_sim: f64,
    pub mean_neg_sim: f64,
}

/// Trains from scratch. Anchors are drawn without replacement within an
/// epoch; a partial tail is dropped and the next epoch reshuffles.
pub fn train_loop(
    data: &TrainData<'_>,
    positives: &dyn PositiveSampler,
    ctx: &StepContext,
    cfg: &TrainConfig,
) -> Result<(EncoderModel, Vec<LogRow>)> {
    cfg.validate()?;
    let n = cfg.pairs_per_batch;
    if data.len() < n {
        return Err(Error::Config(format!(
            "batch of {n} anchors exceeds the {} training rows",
            data.len()
        )));
    }
    let pixels = data.images.pixels_per_image();
    if cfg.encoder.input != pixels {
        return Err(Error::Config(format!(
            "encoder input {} does not match {pixels}-pixel images",
            cfg.encoder.input
        )));
    }
    let mut model = EncoderModel::init(cfg.encoder.clone(), cfg.seed)?;
    let mut opt = Momentum::new(&model, cfg.momentum);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(2);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + n > order.len() {
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let anchors = &order[cursor..cursor + n];
        cursor += n;
        let pos: Vec<usize> = anchors.iter().map(|&a| positives.positive(a)).collect();
        let batch = build_batch(data, anchors, &pos, &cfg.augment, &mut aug_rng)?;
        let report = train_step(&mut model, &mut opt, &batch, ctx, cfg.learning_rate)?;
        log.push(LogRow {
            step,
            loss: report.loss,
            mean_pos_sim: report.mean_pos_sim,
            mean_neg_sim: report.mean_neg_sim,
        });
    }
    Ok((model, log))
}

/// Mean positive and negative cosine similarity of aligned projections on a
/// fixed probe batch: `pairs` seeded anchors with their sampler positives.
pub fn probe_margin(
    model: &EncoderModel,
    data: &TrainData<'_>,
    positives: &dyn PositiveSampler,
    ranges: &AugmentRanges,
    pairs: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<usize> = rand::seq::index::sample(&mut rng, data.len(), pairs.min(data.len())).into_vec();
    let pos: Vec<usize> = anchors.iter().map(|&a| positives.positive(a)).collect();
    let batch = build_batch(data, &anchors, &pos, ranges, &mut rng)?;
    let ctx = StepContext {
        weighting: weighting_registry().create("uniform")?,
        pca: None,
        weight_space: WeightSpace::Raw,
        temperature: 1.0,
        denominator: Denominator::Standard,
        align: true,
    };
    let (report, _) = batch_objective(model, &batch, &ctx)?;
    Ok((report.mean_pos_sim, report.mean_neg_sim))
}
