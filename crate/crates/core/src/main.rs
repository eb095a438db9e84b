use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use posemine::metrics::{evaluate, PoseSet3D};
use posemine::mine::{ranked_entries, RankedEntry};
use posemine::pipeline::{self, IngestSection, MineSection, PcaSection, PipelineConfig, TrainInputs};
use posemine::pretrain::{Denominator, WeightSpace};
use posemine::synth::CorpusConfig;

#[derive(Parser)]
#[command(name = "posemine", version, about = "Similar-hand mining and weighted contrastive pre-training")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-video hand corpus.
    Synth(SynthArgs),
    /// Parse, filter and hand-balance keypoint records.
    Ingest(IngestArgs),
    /// Fit the pose-embedding PCA.
    FitPca(FitPcaArgs),
    /// Project records into an embedding cache.
    Embed(EmbedArgs),
    /// Mine cross-video nearest neighbors.
    Mine(MineArgs),
    /// Print the K nearest cross-video neighbors of one frame.
    Topk(TopkArgs),
    /// Contrastive pre-training on mined pairs.
    Train(TrainArgs),
    /// Pose metrics, or mining quality of a pair file.
    Eval(EvalArgs),
    /// Run every stage into one directory.
    All(AllArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    videos: usize,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 0.8)]
    coherence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Std-dev of keypoint jitter, in crop units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Emit right hands only.
    #[arg(long)]
    right_only: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Image archive aligned with the input lines.
    #[arg(long, requires = "images_out")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    images_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail on the first malformed line.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    min_score: Option<f64>,
}

#[derive(Args)]
struct FitPcaArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = posemine::embed::DEFAULT_DIM)]
    dim: usize,
    /// Use the uncentered second moment.
    #[arg(long)]
    no_center: bool,
    /// Fit on a seeded subsample of this many rows.
    #[arg(long)]
    fit_sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    pca: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Registered search strategy.
    #[arg(long, default_value = "exact")]
    strategy: String,
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long, default_value_t = 8)]
    nprobe: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn section(&self) -> MineSection {
        MineSection {
            strategy: self.strategy.clone(),
            nlist: self.nlist,
            nprobe: self.nprobe,
        }
    }
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the K nearest neighbors per query, with ranks.
    #[arg(long)]
    topk: Option<usize>,
    /// Restrict to one query, as VIDEO:FRAME.
    #[arg(long)]
    query: Option<String>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct TopkArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// VIDEO:FRAME
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct TrainArgs {
    /// Pipeline config; its [train] and [mine] sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the ingest, PCA, embedding and pair artifacts.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    weights: Option<OnOff>,
    #[arg(long)]
    topk_positives: Option<usize>,
    #[arg(long)]
    loss_denominator: Option<Denominator>,
    #[arg(long)]
    weight_space: Option<WeightSpace>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted 3D poses.
    #[arg(long, requires = "gt", conflicts_with = "pairs")]
    pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    #[arg(long)]
    root_relative: bool,
    /// Pair file to score against random cross-video pairs.
    #[arg(long, requires_all = ["records", "embeddings"])]
    pairs: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_query(q: &str) -> anyhow::Result<(String, u64)> {
    let (video, frame) = q.rsplit_once(':').context("query must look like VIDEO:FRAME")?;
    let frame = frame.parse().with_context(|| format!("bad frame id `{frame}`"))?;
    Ok((video.to_string(), frame))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn write_lines<T: serde::Serialize>(rows: &[T], mut w: impl Write) -> anyhow::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn ranked_rows(
    embeddings: &Path,
    search: &SearchArgs,
    query: Option<&str>,
    k: usize,
) -> anyhow::Result<Vec<RankedEntry>> {
    let index = pipeline::load_index(embeddings)?;
    let strategy = pipeline::prepared_search(&index, &search.section(), search.seed)?;
    let queries: Vec<usize> = match query {
        Some(q) => {
            let (video, frame) = parse_query(q)?;
            vec![index
                .find(&video, frame)
                .with_context(|| format!("no embedding for {video}:{frame}"))?]
        }
        None => (0..index.len()).collect(),
    };
    let lists = strategy.topk_batch(&index, &queries, k)?;
    Ok(queries
        .iter()
        .zip(&lists)
        .flat_map(|(&q, top)| ranked_entries(index.store(), q, top))
        .collect())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = CorpusConfig {
                videos: a.videos,
                frames: a.frames,
                coherence: a.coherence,
                seed: a.seed,
                image_size: a.image_size,
                noise: a.noise,
                left_hands: !a.right_only,
                ..Default::default()
            };
            pipeline::run_synth(&cfg, &a.out_dir)?;
        }
        Command::Ingest(a) => {
            let images = a.images.as_deref().zip(a.images_out.as_deref());
            let section = IngestSection {
                strict: a.strict,
                min_score: a.min_score,
            };
            pipeline::run_ingest(&a.input, images, &a.out, &section, a.seed)?;
        }
        Command::FitPca(a) => {
            let section = PcaSection {
                dim: a.dim,
                center: !a.no_center,
                fit_sample: a.fit_sample,
            };
            pipeline::run_fit_pca(&a.records, &a.out, &section, a.seed)?;
        }
        Command::Embed(a) => {
            pipeline::run_embed(&a.records, &a.pca, &a.out)?;
        }
        Command::Mine(a) => match (a.topk, &a.query) {
            (None, None) => {
                pipeline::run_mine(&a.embeddings, &a.out, &a.search.section(), a.search.seed)?;
            }
            (k, q) => {
                let rows = ranked_rows(&a.embeddings, &a.search, q.as_deref(), k.unwrap_or(1))?;
                write_lines(&rows, BufWriter::new(std::fs::File::create(&a.out)?))?;
            }
        },
        Command::Topk(a) => {
            let rows = ranked_rows(&a.embeddings, &a.search, Some(&a.query), a.k)?;
            write_lines(&rows, io::stdout().lock())?;
        }
        Command::Train(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg = cfg.with_seed(seed);
            }
            let t = &mut cfg.train;
            if let Some(v) = a.steps {
                t.steps = v;
            }
            if let Some(v) = a.learning_rate {
                t.learning_rate = v;
            }
            if let Some(w) = a.weights {
                t.weighting = match w {
                    OnOff::On => "adaptive",
                    OnOff::Off => "uniform",
                }
                .into();
            }
            if let Some(v) = a.topk_positives {
                t.topk_positives = v;
            }
            if let Some(v) = a.loss_denominator {
                t.loss_denominator = v;
            }
            if let Some(v) = a.weight_space {
                t.weight_space = v;
            }
            let model_out = a.model_out.unwrap_or_else(|| a.dir.join(pipeline::MODEL_FILE));
            let log_out = a.log_out.unwrap_or_else(|| a.dir.join(pipeline::LOG_FILE));
            pipeline::run_train(&TrainInputs::in_dir(&a.dir), &cfg.train, &cfg.mine, &model_out, &log_out)?;
        }
        Command::Eval(a) => {
            let report = if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
                let read = |p: &Path| -> anyhow::Result<PoseSet3D> {
                    let f = std::fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
                    Ok(PoseSet3D::read_jsonl(io::BufReader::new(f))?)
                };
                serde_json::to_value(evaluate(&read(pred)?, &read(gt)?, a.root_relative)?)?
            } else if let (Some(pairs), Some(records), Some(cache)) = (&a.pairs, &a.records, &a.embeddings) {
                let out = a.out.clone().unwrap_or_else(|| pairs.with_extension("quality.json"));
                serde_json::to_value(pipeline::run_mining_quality(records, cache, pairs, &out, a.seed)?)?
            } else {
                bail!("eval needs --pred and --gt, or --pairs with --records and --embeddings");
            };
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(out) = &a.out {
                std::fs::write(out, format!("{text}\n"))?;
            }
        }
        Command::All(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg = cfg.with_seed(seed);
            } else {
                cfg = cfg.clone().with_seed(cfg.seed);
            }
            let q = pipeline::run_all(&cfg, &a.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&q)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
