use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use mmva::data::{
    clean_caption, load_dataset, read_pair_list, refine_caption, write_pair_list, Dataset, DatasetWriter, FeatureFile,
    FewShotConfig, FixtureTransport, Split,
};
use mmva::matching::{imemnet_pair_selection, SigmaStats};
use mmva::model::MmvaModel;
use mmva::par::Exec;
use mmva::retrieval::{build_index, run_queries_with, IndexSource, QueryOutcome, RetrievalMetrics};
use mmva::synthetic::{generate, SyntheticConfig};
use mmva::training::{
    evaluate, init_model, load_checkpoint, save_checkpoint, train_with_observer, CheckpointMeta, EpochStats,
    GroundTruthPredictor, TrainMode, TrainSet, TrainingData,
};
use mmva::zeroshot::{f_score, generate_prompts, select_prompt, summarize_video, ArousalSource, PromptTemplateSet, VideoClip};
use mmva::{Error, FeatureDims, FeatureRecord, Features, Modality, SeededRng, Triplet, VaVector};

use crate::config::RunConfig;
use crate::io::{print_json, print_jsonl, read_json, read_jsonl, write_json, write_jsonl};
use crate::{Cli, Command};

/// Global settings after merging defaults, the config file and flags.
struct Ctx {
    config: RunConfig,
    seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    configure_threads(cli.threads)?;
    let seed = config.train.seed;
    let mut ctx = Ctx { config, seed };
    match cli.command {
        Command::Sigma(a) => sigma(&ctx, a),
        Command::Pairgen(a) => pairgen(&ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Retrieve(a) => retrieve(&ctx, a),
        Command::Promptsearch(a) => promptsearch(&ctx, a),
        Command::Summarize(a) => summarize(&ctx, a),
        Command::CleanCaptions(a) => clean_captions(a),
        Command::Synth(a) => synth(&ctx, a),
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if threads.is_some() {
        warn!("built without the `parallel` feature; --threads is ignored");
    }
    Ok(())
}

/// Training always runs on one worker, whatever `--threads` says.
#[cfg(feature = "parallel")]
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(1).build()?.install(f))
}

#[cfg(not(feature = "parallel"))]
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    Ok(f())
}

fn load(manifest: &Path, dims: &FeatureDims) -> anyhow::Result<Dataset> {
    let ds = load_dataset(manifest, dims)?;
    info!("dataset report: {}", serde_json::to_string(&ds.report)?);
    for (modality, n) in &ds.report.shared_rows {
        if *n > 0 {
            warn!("{n} {modality} feature rows are shared between splits");
        }
    }
    Ok(ds)
}

fn split_of(ds: &Dataset, split: Split) -> Result<&TrainSet, Error> {
    match ds.split(split) {
        Some(s) if !s.images.is_empty() && !s.pairs.is_empty() => Ok(s),
        _ => Err(Error::EmptySet(match split {
            Split::Train => "train split",
            Split::Val => "val split",
            Split::Test => "test split",
        })),
    }
}

fn load_model(path: &Path) -> anyhow::Result<(MmvaModel, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    info!("loaded checkpoint {} ({:?})", path.display(), meta.train.as_ref().map(|t| t.mode));
    Ok((model, meta))
}

/// Checkpoint sigma when available, otherwise the training split's.
fn frozen_sigma(meta: Option<&CheckpointMeta>, ds: &Dataset) -> anyhow::Result<SigmaStats> {
    if let Some(s) = meta.and_then(|m| m.sigma) {
        return Ok(s);
    }
    Ok(split_of(ds, Split::Train)?.sigma()?)
}

/// Image `k` with pair `k` for `k < max(images, pairs)`, cycling the
/// shorter list.
fn default_triplets(set: &TrainSet, sigma: &SigmaStats) -> Vec<Triplet> {
    let (a, b) = (set.images.len(), set.pairs.len());
    (0..a.max(b)).map(|k| set.triplet(k % a, k % b, sigma)).collect()
}

/// A record for prediction only; its label is never read.
fn unlabeled(id: String, modality: Modality, features: Features) -> Result<FeatureRecord, Error> {
    Ok(FeatureRecord { id, modality, features, va: VaVector::new(0.5, 0.5)?, pair_id: None })
}

/// Feature rows referenced by path and offset, with files read once.
#[derive(Default)]
struct FeatureCache {
    files: HashMap<PathBuf, FeatureFile>,
}

impl FeatureCache {
    fn row(&mut self, base: &Path, file: &str, offset: u64) -> Result<Vec<f64>, Error> {
        let path = base.join(file);
        if !self.files.contains_key(&path) {
            let f = FeatureFile::read(&path)?;
            self.files.insert(path.clone(), f);
        }
        let f = &self.files[&path];
        f.row(offset as usize)
            .map(|r| r.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::Data(format!("offset {offset} out of range for {} ({} rows)", path.display(), f.rows())))
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct SigmaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
}

fn sigma(ctx: &Ctx, a: SigmaArgs) -> anyhow::Result<()> {
    let ds = load(&a.manifest, &ctx.config.model.dims.features)?;
    let stats = split_of(&ds, a.split)?.sigma()?;
    print_json(&stats)
}

#[derive(Debug, Args)]
pub struct PairgenArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
}

#[derive(Serialize)]
struct PairgenSummary {
    out: PathBuf,
    images: usize,
    clips: usize,
    pairs: usize,
    sigma: f64,
    seed: u64,
}

fn pairgen(ctx: &Ctx, a: PairgenArgs) -> anyhow::Result<()> {
    let ds = load(&a.manifest, &ctx.config.model.dims.features)?;
    let set = split_of(&ds, a.split)?;
    let sigma = set.sigma()?;
    let clips: Vec<FeatureRecord> = set.pairs.iter().map(|(m, _)| m.clone()).collect();
    let pairs = imemnet_pair_selection(&mut SeededRng::new(ctx.seed), &set.images, &clips, &sigma)?;
    write_pair_list(&a.out, &pairs)?;
    print_json(&PairgenSummary {
        out: a.out,
        images: set.images.len(),
        clips: clips.len(),
        pairs: pairs.len(),
        sigma: sigma.sigma,
        seed: ctx.seed,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Fixed image/music pairs; required by `no_random_matching`.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Per-epoch statistics as JSON lines.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainSummary {
    checkpoint: PathBuf,
    mode: TrainMode,
    epochs: usize,
    final_loss: Option<f64>,
    sigma: SigmaStats,
    seed: u64,
}

fn train(ctx: &mut Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let cfg = &mut ctx.config;
    if let Some(m) = a.mode {
        cfg.train.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;
    if cfg.train.mode == TrainMode::NoRandomMatching && a.pairs.is_none() {
        return Err(Error::Config("mode no_random_matching needs --pairs".into()).into());
    }
    if cfg.train.mode != TrainMode::NoRandomMatching && a.pairs.is_some() {
        warn!("--pairs is only used by no_random_matching; ignoring it");
    }
    info!("effective config: {}", serde_json::to_string(&*cfg)?);

    let ds = load(&a.manifest, &cfg.model.dims.features)?;
    let set = split_of(&ds, Split::Train)?;
    let sigma = set.sigma()?;
    let fixed_pairs = match (&a.pairs, cfg.train.mode) {
        (Some(p), TrainMode::NoRandomMatching) => Some(set.resolve(&read_pair_list(p)?)?),
        _ => None,
    };
    let validation = split_of(&ds, Split::Val).ok().map(|v| default_triplets(v, &sigma));
    let data = TrainingData { train: set, sigma, fixed_pairs, validation: validation.as_deref() };

    let mut model = init_model(cfg.model, cfg.train.seed)?;
    let train_cfg = cfg.train.clone();
    let history = single_threaded(|| {
        train_with_observer(&mut model, &data, &train_cfg, |s: &EpochStats| {
            info!("epoch {} loss {:.6} lr {:.3e}", s.epoch, s.mean_loss, s.lr);
        })
    })??;
    if let Some(p) = &a.loss_log {
        write_jsonl(p, &history)?;
    }

    let meta = CheckpointMeta { train: Some(train_cfg.clone()), sigma: Some(sigma), seed: Some(train_cfg.seed), ..CheckpointMeta::new(cfg.model) };
    save_checkpoint(&model, &meta, &a.out_checkpoint)?;
    print_json(&TrainSummary {
        checkpoint: a.out_checkpoint,
        mode: train_cfg.mode,
        epochs: history.len(),
        final_loss: history.last().map(|s| s.mean_loss),
        sigma,
        seed: train_cfg.seed,
    })
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
    checkpoint: Option<PathBuf>,
    /// Score the labels themselves (a zero-error baseline).
    #[arg(long)]
    ground_truth: bool,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Explicit image/music pairing instead of the index-aligned default.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    let loaded = a.checkpoint.as_deref().map(load_model).transpose()?;
    let dims = loaded.as_ref().map_or(ctx.config.model.dims.features, |(m, _)| m.config().dims.features);
    let ds = load(&a.manifest, &dims)?;
    let sigma = frozen_sigma(loaded.as_ref().map(|(_, m)| m), &ds)?;
    let set = split_of(&ds, a.split)?;
    let triplets = match &a.pairs {
        Some(p) => set.resolve(&read_pair_list(p)?)?.into_iter().map(|(i, j)| set.triplet(i, j, &sigma)).collect(),
        None => default_triplets(set, &sigma),
    };
    let report = match &loaded {
        Some((model, _)) => evaluate(model, &triplets)?,
        None => evaluate(&GroundTruthPredictor, &triplets)?,
    };
    match &a.out {
        Some(p) => write_json(p, &report),
        None => print_json(&report),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SourceArg {
    Predicted,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Where query and corpus VA come from.
    #[arg(long, value_enum, default_value = "predicted")]
    source: SourceArg,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Result lines go here instead of stdout; stdout then carries the metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct QueryLine<'a> {
    query_id: &'a str,
    results: &'a [mmva::retrieval::RankedResult],
}

fn retrieve(ctx: &Ctx, a: RetrieveArgs) -> anyhow::Result<()> {
    let loaded = a.checkpoint.as_deref().map(load_model).transpose()?;
    let (source, model) = match (a.source, &loaded) {
        (SourceArg::GroundTruth, _) => (IndexSource::GroundTruth, None),
        (SourceArg::Predicted, Some((m, _))) => (IndexSource::Predicted, Some(m)),
        (SourceArg::Predicted, None) => {
            return Err(Error::Config("--source predicted needs --checkpoint".into()).into())
        }
    };
    let dims = model.map_or(ctx.config.model.dims.features, |m| m.config().dims.features);
    let ds = load(&a.manifest, &dims)?;
    let sigma = frozen_sigma(loaded.as_ref().map(|(_, m)| m), &ds)?;
    let set = split_of(&ds, a.split)?;

    let music: Vec<FeatureRecord> = set.pairs.iter().map(|(m, _)| m.clone()).collect();
    let index = build_index(model, &music, source)?;
    let captions: Vec<&FeatureRecord> = set.pairs.iter().map(|(_, c)| c).collect();
    let query_va = match model {
        Some(m) => m.predict_records(&captions)?,
        None => captions.iter().map(|c| c.va).collect(),
    };
    let queries: Vec<(String, VaVector, String)> =
        set.pairs.iter().zip(query_va).map(|((m, c), va)| (c.id.clone(), va, m.id.clone())).collect();
    let outcomes: Vec<QueryOutcome> = run_queries_with(Exec::default(), &queries, &index, a.k, &sigma)?;

    let ranks: Vec<usize> = outcomes.iter().map(|o| o.relevant_rank.unwrap_or(usize::MAX)).collect();
    let metrics = RetrievalMetrics::from_ranks(&ranks);
    let lines: Vec<QueryLine<'_>> = outcomes.iter().map(|o| QueryLine { query_id: &o.query_id, results: &o.results }).collect();
    if let Some(p) = &a.metrics_out {
        write_json(p, &metrics)?;
    }
    match &a.out {
        Some(p) => {
            write_jsonl(p, &lines)?;
            print_json(&metrics)
        }
        None => {
            info!("metrics: {}", serde_json::to_string(&metrics)?);
            print_jsonl(&lines)
        }
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// JSON `{"templates": [...], "vocab": {slot: [...]}}`.
    #[arg(long)]
    templates: PathBuf,
    /// JSON lines `{"prompt", "va": [v, a]}` with precomputed prompt VA.
    #[arg(long, conflicts_with = "prompt_features")]
    prompt_va: Option<PathBuf>,
    /// JSON lines `{"prompt", "feature_file", "offset"}` with caption
    /// features; needs --checkpoint.
    #[arg(long)]
    prompt_features: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Target VA as `v,a` in [0, 1].
    #[arg(long, conflicts_with = "image_id")]
    image_va: Option<String>,
    /// Target image looked up in --manifest.
    #[arg(long, requires = "manifest")]
    image_id: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Print the expanded prompts and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PromptVa {
    prompt: String,
    va: [f64; 2],
}

#[derive(Deserialize)]
struct PromptFeature {
    prompt: String,
    feature_file: String,
    offset: u64,
}

#[derive(Serialize)]
struct PromptChoice {
    prompt: String,
    distance: f64,
    image_va: [f64; 2],
    candidates: usize,
}

fn parse_va(s: &str) -> Result<VaVector, Error> {
    let bad = || Error::Config(format!("--image-va expects `v,a`, got `{s}`"));
    let (v, a) = s.split_once(',').ok_or_else(bad)?;
    VaVector::new(v.trim().parse().map_err(|_| bad())?, a.trim().parse().map_err(|_| bad())?)
}

fn promptsearch(ctx: &Ctx, a: PromptArgs) -> anyhow::Result<()> {
    let templates: PromptTemplateSet = read_json(&a.templates)?;
    let prompts = generate_prompts(&templates)?;
    if a.list {
        return print_jsonl(&prompts);
    }
    let loaded = a.checkpoint.as_deref().map(load_model).transpose()?;
    let model = loaded.as_ref().map(|(m, _)| m);

    let prompt_va: HashMap<String, VaVector> = match (&a.prompt_va, &a.prompt_features) {
        (Some(p), _) => {
            read_jsonl::<PromptVa>(p)?.into_iter().map(|r| Ok((r.prompt, VaVector::new(r.va[0], r.va[1])?))).collect::<Result<_, Error>>()?
        }
        (None, Some(p)) => {
            let model = model.ok_or_else(|| Error::Config("--prompt-features needs --checkpoint".into()))?;
            let d = model.config().dims.features;
            let base = parent_dir(p);
            let mut cache = FeatureCache::default();
            let rows = read_jsonl::<PromptFeature>(p)?;
            let records = rows
                .iter()
                .map(|r| {
                    let data = cache.row(&base, &r.feature_file, r.offset)?;
                    unlabeled(r.prompt.clone(), Modality::Caption, Features::Stacked { layers: d.layers, dim: d.token_dim, data })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let refs: Vec<&FeatureRecord> = records.iter().collect();
            rows.into_iter().map(|r| r.prompt).zip(model.predict_records(&refs)?).collect()
        }
        (None, None) => return Err(Error::Config("one of --prompt-va or --prompt-features is required".into()).into()),
    };

    let image_va = match (&a.image_va, &a.image_id) {
        (Some(s), _) => parse_va(s)?,
        (None, Some(id)) => {
            let manifest = a.manifest.as_deref().context("--image-id needs --manifest")?;
            let dims = model.map_or(ctx.config.model.dims.features, |m| m.config().dims.features);
            let ds = load(manifest, &dims)?;
            let image = ds
                .splits
                .values()
                .flat_map(|s| s.images.iter())
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::Data(format!("image `{id}` not in manifest")))?;
            match model {
                Some(m) => m.predict_records(&[image])?[0],
                None => image.va,
            }
        }
        (None, None) => return Err(Error::Config("one of --image-va or --image-id is required".into()).into()),
    };

    let (prompt, distance) = select_prompt(&image_va, &prompts, |p| {
        prompt_va.get(p).copied().ok_or_else(|| Error::Data(format!("no VA for prompt `{p}`")))
    })?;
    let choice = PromptChoice { prompt, distance, image_va: image_va.as_array(), candidates: prompts.len() };
    match &a.out {
        Some(p) => write_json(p, &choice),
        None => print_json(&choice),
    }
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// JSON lines `{clip_id, start_s, duration_s, importance?, feature_ref?}`.
    #[arg(long)]
    clips: PathBuf,
    /// Predict importance as image arousal from each clip's `feature_ref`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = mmva::zeroshot::DEFAULT_BUDGET_FRACTION)]
    budget: f64,
    /// JSON array of reference `[start, end]` intervals.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct FeatureRef {
    feature_file: String,
    offset: u64,
}

#[derive(Deserialize)]
struct ClipLine {
    clip_id: String,
    start_s: f64,
    duration_s: f64,
    importance: Option<f64>,
    feature_ref: Option<FeatureRef>,
}

#[derive(Serialize)]
struct SummaryOut {
    selected: Vec<String>,
    total_duration_s: f64,
    budget_s: f64,
    objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_score: Option<f64>,
}

fn summarize(_ctx: &Ctx, a: SummarizeArgs) -> anyhow::Result<()> {
    let lines: Vec<ClipLine> = read_jsonl(&a.clips)?;
    let loaded = a.checkpoint.as_deref().map(load_model).transpose()?;
    let mut frames = Vec::new();
    if let Some((model, _)) = &loaded {
        let base = parent_dir(&a.clips);
        let mut cache = FeatureCache::default();
        for l in &lines {
            let r = l.feature_ref.as_ref().ok_or_else(|| Error::Validation { id: l.clip_id.clone(), reason: "missing feature_ref".into() })?;
            let data = cache.row(&base, &r.feature_file, r.offset)?;
            if data.len() != model.config().dims.features.image_dim {
                return Err(Error::ShapeMismatch(format!("clip `{}` has {} features", l.clip_id, data.len())).into());
            }
            frames.push(unlabeled(l.clip_id.clone(), Modality::Image, Features::Flat(data))?);
        }
    }
    let clips = lines
        .iter()
        .map(|l| {
            let importance = match (l.importance, &loaded) {
                (_, Some(_)) => 0.0,
                (Some(v), None) => v,
                (None, None) => return Err(Error::Validation { id: l.clip_id.clone(), reason: "missing importance".into() }),
            };
            Ok(VideoClip { clip_id: l.clip_id.clone(), start_s: l.start_s, duration_s: l.duration_s, importance })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let source = match &loaded {
        Some((model, _)) => ArousalSource::Predicted { model, frames: &frames },
        None => ArousalSource::Supplied,
    };
    let summary = summarize_video(clips, source, a.budget)?;
    let f_score = match &a.reference {
        Some(p) => {
            let reference: Vec<(f64, f64)> = read_json(p)?;
            Some(f_score(&summary.intervals, &reference)?)
        }
        None => None,
    };
    let out = SummaryOut {
        selected: summary.selected,
        total_duration_s: summary.total_duration_s,
        budget_s: summary.budget_s,
        objective: summary.objective,
        f_score,
    };
    match &a.out {
        Some(p) => write_json(p, &out),
        None => print_json(&out),
    }
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// JSON lines `{"id", "caption"}`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also send each caption through the refinement transport.
    #[arg(long, requires = "shots")]
    refine: bool,
    /// Recorded refinement exchanges to replay.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Few-shot examples for the refinement request.
    #[arg(long)]
    shots: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionLine {
    id: String,
    caption: String,
}

#[derive(Serialize)]
struct CleanSummary {
    output: PathBuf,
    captions: usize,
    rewritten: usize,
    refined: usize,
}

fn clean_captions(a: CleanArgs) -> anyhow::Result<()> {
    let input: Vec<CaptionLine> = read_jsonl(&a.input)?;
    let refiner = if a.refine {
        let shots = FewShotConfig::load(a.shots.as_deref().context("--refine needs --shots")?)?;
        let transport: Box<dyn mmva::data::RefinementTransport> = match &a.fixture {
            Some(p) => Box::new(FixtureTransport::load(p)?),
            None => Box::new(mmva::data::OfflineTransport),
        };
        Some((shots, transport))
    } else {
        None
    };
    let (mut rewritten, mut refined) = (0, 0);
    let mut out = Vec::with_capacity(input.len());
    for line in input {
        let mut caption = clean_caption(&line.caption);
        if caption != line.caption {
            rewritten += 1;
        }
        if let Some((shots, transport)) = &refiner {
            let r = refine_caption(&caption, shots, transport.as_ref())?;
            if r != caption {
                refined += 1;
            }
            caption = r;
        }
        out.push(CaptionLine { id: line.id, caption });
    }
    write_jsonl(&a.output, &out)?;
    print_json(&CleanSummary { output: a.output, captions: out.len(), rewritten, refined })
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    n_train: usize,
    #[arg(long, default_value_t = 64)]
    n_val: usize,
    #[arg(long, default_value_t = 128)]
    n_test: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Serialize)]
struct SynthSummary {
    manifest: PathBuf,
    counts: BTreeMap<Split, usize>,
    sigma: f64,
    seed: u64,
}

/// The validation split is carved from the front of the generated test
/// split, so `n_test` pairs remain for testing.
fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        n_train: a.n_train,
        n_test: a.n_val + a.n_test,
        noise: a.noise,
        dims: ctx.config.model.dims.features,
        seed: ctx.seed,
        ..SyntheticConfig::default()
    };
    let data = generate(&cfg)?;
    let (mut val, mut test) = (TrainSet::default(), TrainSet::default());
    for (k, (img, pair)) in data.test.images.iter().zip(&data.test.pairs).enumerate() {
        let dst = if k < a.n_val { &mut val } else { &mut test };
        dst.images.push(img.clone());
        dst.pairs.push(pair.clone());
    }
    let mut writer = DatasetWriter::new(&a.out);
    writer.push_set(&data.train, Split::Train)?;
    writer.push_set(&val, Split::Val)?;
    writer.push_set(&test, Split::Test)?;
    let manifest = writer.finish()?;
    let counts = BTreeMap::from([(Split::Train, a.n_train), (Split::Val, a.n_val), (Split::Test, a.n_test)]);
    print_json(&SynthSummary { manifest, counts, sigma: data.sigma.sigma, seed: ctx.seed })
}
