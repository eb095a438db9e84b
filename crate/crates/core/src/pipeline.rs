//! Stage plumbing: every stage reads its inputs from disk and writes its
//! artifacts to disk, so stages can be run one at a time or chained by
//! [`run_all`].

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{embed_records, flatten_record, fit_pca, load_cache, save_cache, FitOptions, PcaModel, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::ingest::{balance_hands, parse_records, Hand, ParseOptions, RecordSet};
use crate::metrics::{mining_quality, MiningQuality};
use crate::mine::{build_index, mine_all_with, search_registry, MiningIndex, NeighborSearch, PairTable, SearchConfig};
use crate::pretrain::{
    train_loop, LogRow, PositiveSampler, RankedPositives, StepContext, TablePositives, TrainConfig, TrainData,
};
use crate::synth::{generate_corpus, CorpusConfig, ImageArchive};

/// Millimeters per crop unit when writing synthetic 3D poses.
pub const POSE_SCALE_MM: f64 = 200.0;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const IMAGES_FILE: &str = "images.simg";
pub const POSES_FILE: &str = "poses3d.jsonl";
pub const BALANCED_FILE: &str = "balanced.jsonl";
pub const BALANCED_IMAGES_FILE: &str = "balanced.simg";
pub const PCA_FILE: &str = "pca.json";
pub const CACHE_FILE: &str = "embeddings.simh";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const QUALITY_FILE: &str = "mining_quality.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub strict: bool,
    pub min_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    pub dim: usize,
    pub center: bool,
    pub fit_sample: Option<usize>,
}

impl Default for PcaSection {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            center: true,
            fit_sample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineSection {
    pub strategy: String,
    pub nlist: Option<usize>,
    pub nprobe: usize,
}

impl Default for MineSection {
    fn default() -> Self {
        Self {
            strategy: "exact".into(),
            nlist: None,
            nprobe: SearchConfig::default().nprobe,
        }
    }
}

/// Whole-pipeline configuration. The top-level `seed` replaces every
/// per-stage seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: CorpusConfig,
    pub ingest: IngestSection,
    pub pca: PcaSection,
    pub mine: MineSection,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("input {} does not exist", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path)?))
}

pub fn read_records(path: &Path) -> Result<RecordSet> {
    let (set, report) = parse_records(open(path)?, &ParseOptions { strict: true, min_score: None })?;
    debug_assert!(report.rejected.is_empty());
    Ok(set)
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    require(path)?;
    PcaModel::from_json(&fs::read_to_string(path)?)
}

pub fn read_pairs(path: &Path, index: &MiningIndex) -> Result<PairTable> {
    PairTable::read_jsonl(index.store(), open(path)?)
}

pub fn load_index(cache: &Path) -> Result<MiningIndex> {
    require(cache)?;
    build_index(load_cache(cache)?)
}

/// Builds and prepares a registered search strategy.
pub fn prepared_search(index: &MiningIndex, section: &MineSection, seed: u64) -> Result<Box<dyn NeighborSearch>> {
    let mut search = search_registry().create(&section.strategy)?;
    search.prepare(
        index,
        &SearchConfig {
            nlist: section.nlist,
            nprobe: section.nprobe,
            seed,
        },
    )?;
    Ok(search)
}

/// Writes the record file, image archive and 3D poses of a synthetic corpus.
pub fn run_synth(cfg: &CorpusConfig, out_dir: &Path) -> Result<usize> {
    let corpus = generate_corpus(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut w = create(&out_dir.join(RECORDS_FILE))?;
    corpus.records.write_jsonl(&mut w)?;
    w.flush()?;
    corpus.images.save(out_dir.join(IMAGES_FILE))?;

    let poses: Vec<_> = corpus
        .poses
        .iter()
        .map(|p| {
            std::array::from_fn(|j| {
                [
                    p.keypoints[j][0] * POSE_SCALE_MM,
                    p.keypoints[j][1] * POSE_SCALE_MM,
                    p.depth[j] * POSE_SCALE_MM,
                ]
            })
        })
        .collect();
    let ids: Vec<(String, u64)> = corpus
        .records
        .records()
        .iter()
        .map(|r| (r.video_id.clone(), r.frame_id))
        .collect();
    let mut w = create(&out_dir.join(POSES_FILE))?;
    crate::metrics::PoseSet3D::new(poses)?.write_jsonl(Some(&ids), &mut w)?;
    w.flush()?;
    log::info!("synth: {} records in {} videos", corpus.records.len(), cfg.videos);
    Ok(corpus.records.len())
}

/// Parses, filters and balances records; the matching images (mirrored
/// where the record was mirrored) are written when `images` is given.
pub fn run_ingest(
    input: &Path,
    images: Option<(&Path, &Path)>,
    out: &Path,
    section: &IngestSection,
    seed: u64,
) -> Result<RecordSet> {
    let opts = ParseOptions {
        strict: section.strict,
        min_score: section.min_score,
    };
    let (set, report) = parse_records(open(input)?, &opts)?;
    for (line, msg) in &report.rejected {
        log::warn!("{}:{line}: {msg}", input.display());
    }
    if report.filtered_low_score > 0 {
        log::info!("ingest: {} records below min_score", report.filtered_low_score);
    }
    let balanced = balance_hands(&set, seed);
    let mut w = create(out)?;
    balanced.set.write_jsonl(&mut w)?;
    w.flush()?;
    if let Some((src, dst)) = images {
        require(src)?;
        let archive = ImageArchive::load(src)?;
        // One image per non-blank input line.
        let lines = set.len() + report.filtered_low_score + report.rejected.len();
        if archive.len() != lines {
            return Err(Error::DimMismatch {
                expected: lines,
                found: archive.len(),
            });
        }
        let picks = balanced
            .origin
            .iter()
            .map(|&(i, hand)| (report.kept_rows[i], hand == Hand::Left));
        archive.select(picks).save(dst)?;
    }
    log::info!(
        "ingest: {} parsed, {} rejected, {} after balancing",
        set.len(),
        report.rejected.len(),
        balanced.set.len()
    );
    Ok(balanced.set)
}

pub fn run_fit_pca(records: &Path, out: &Path, section: &PcaSection, seed: u64) -> Result<PcaModel> {
    let set = read_records(records)?;
    let vectors: Vec<_> = set.records().iter().map(flatten_record).collect();
    let model = fit_pca(
        &vectors,
        &FitOptions {
            dim: section.dim,
            center: section.center,
            subsample: section.fit_sample,
            seed,
        },
    )?;
    let mut w = create(out)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.flush()?;
    log::info!("fit-pca: D = {} from {} rows", model.dim, vectors.len());
    Ok(model)
}

pub fn run_embed(records: &Path, pca: &Path, out: &Path) -> Result<usize> {
    let set = read_records(records)?;
    let store = embed_records(&read_pca(pca)?, &set)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_cache(&store, out)?;
    log::info!("embed: {} rows of dim {}", store.len(), store.dim());
    Ok(store.len())
}

pub fn run_mine(cache: &Path, out: &Path, section: &MineSection, seed: u64) -> Result<PairTable> {
    let index = load_index(cache)?;
    let search = prepared_search(&index, section, seed)?;
    let table = mine_all_with(&index, search.as_ref())?;
    let mut w = create(out)?;
    table.write_jsonl(index.store(), &mut w)?;
    w.flush()?;
    log::info!("mine: {} pairs with `{}`", table.len(), search.name());
    Ok(table)
}

/// Inputs of the training stage.
#[derive(Clone, Debug)]
pub struct TrainInputs {
    pub records: PathBuf,
    pub images: PathBuf,
    pub pairs: PathBuf,
    pub cache: PathBuf,
    pub pca: PathBuf,
}

impl TrainInputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            records: dir.join(BALANCED_FILE),
            images: dir.join(BALANCED_IMAGES_FILE),
            pairs: dir.join(PAIRS_FILE),
            cache: dir.join(CACHE_FILE),
            pca: dir.join(PCA_FILE),
        }
    }
}

pub fn run_train(
    inputs: &TrainInputs,
    cfg: &TrainConfig,
    search: &MineSection,
    model_out: &Path,
    log_out: &Path,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    let records = read_records(&inputs.records)?;
    require(&inputs.images)?;
    let images = ImageArchive::load(&inputs.images)?;
    let data = TrainData::new(&images, &records)?;
    let index = load_index(&inputs.cache)?;
    if index.len() != records.len() {
        return Err(Error::DimMismatch {
            expected: records.len(),
            found: index.len(),
        });
    }
    let sampler: Box<dyn PositiveSampler> = if cfg.topk_positives == 1 {
        Box::new(TablePositives::new(&read_pairs(&inputs.pairs, &index)?, records.len())?)
    } else {
        let s = prepared_search(&index, search, cfg.seed)?;
        Box::new(RankedPositives::build(&index, s.as_ref(), cfg.topk_positives)?)
    };
    let pca = if cfg.weighting == "uniform" {
        None
    } else {
        Some(read_pca(&inputs.pca)?)
    };
    let ctx = StepContext::from_config(cfg, pca)?;
    let (model, log) = train_loop(&data, sampler.as_ref(), &ctx, cfg)?;

    let mut w = create(model_out)?;
    serde_json::to_writer(&mut w, &model)?;
    w.flush()?;
    let mut w = create(log_out)?;
    for row in &log {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if let Some(last) = log.last() {
        log::info!(
            "train: {} steps, final loss {:.4}, pos {:.4}, neg {:.4}",
            log.len(),
            last.loss,
            last.mean_pos_sim,
            last.mean_neg_sim
        );
    }
    Ok(log)
}

pub fn run_mining_quality(records: &Path, cache: &Path, pairs: &Path, out: &Path, seed: u64) -> Result<MiningQuality> {
    let set = read_records(records)?;
    let index = load_index(cache)?;
    let table = read_pairs(pairs, &index)?;
    let q = mining_quality(&set, &table, seed);
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &q)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(q)
}

/// Every artifact `run_all` writes, relative to its output directory.
pub const ALL_ARTIFACTS: [&str; 11] = [
    RECORDS_FILE,
    IMAGES_FILE,
    POSES_FILE,
    BALANCED_FILE,
    BALANCED_IMAGES_FILE,
    PCA_FILE,
    CACHE_FILE,
    PAIRS_FILE,
    MODEL_FILE,
    LOG_FILE,
    QUALITY_FILE,
];

/// synth → ingest → fit-pca → embed → mine → train → mining-quality eval.
pub fn run_all(cfg: &PipelineConfig, out_dir: &Path) -> Result<MiningQuality> {
    let seed = cfg.seed;
    let d = |name: &str| out_dir.join(name);
    run_synth(&cfg.synth, out_dir)?;
    run_ingest(
        &d(RECORDS_FILE),
        Some((&d(IMAGES_FILE), &d(BALANCED_IMAGES_FILE))),
        &d(BALANCED_FILE),
        &cfg.ingest,
        seed,
    )?;
    run_fit_pca(&d(BALANCED_FILE), &d(PCA_FILE), &cfg.pca, seed)?;
    run_embed(&d(BALANCED_FILE), &d(PCA_FILE), &d(CACHE_FILE))?;
    run_mine(&d(CACHE_FILE), &d(PAIRS_FILE), &cfg.mine, seed)?;
    run_train(
        &TrainInputs::in_dir(out_dir),
        &cfg.train,
        &cfg.mine,
        &d(MODEL_FILE),
        &d(LOG_FILE),
    )?;
    run_mining_quality(&d(BALANCED_FILE), &d(CACHE_FILE), &d(PAIRS_FILE), &d(QUALITY_FILE), seed)
}
