//! Losses, the random-matching training loop, evaluation metrics and
//! checkpoints.

mod checkpoint;
mod eval;
mod loss;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use eval::{evaluate, report_from_predictions, ErrorMetrics, EvalReport, GroundTruthPredictor, TripletPredictor, VaMetrics};
pub use loss::{loss_sim, loss_va, total_loss, LossParts};

use crate::error::{Error, Result};
use crate::matching::{self, PairList, SigmaStats};
use crate::model::{MmvaModel, Mode, OutputGrads, TripletBatch};
use crate::nn::{self, cosine_lr, AdamW, AdamWConfig, Tensor2};
use crate::rng::SeededRng;
use crate::types::{check_music_caption, FeatureRecord, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Images and music-caption pairs drawn independently every batch.
    Full,
    /// Batches iterate a fixed list of image/music pairs.
    NoRandomMatching,
    /// Random matching, but the similarity predictor and its loss are off.
    NoSimilarityPredictor,
}

impl TrainMode {
    pub fn uses_similarity(self) -> bool {
        self != TrainMode::NoSimilarityPredictor
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Full => "full",
            TrainMode::NoRandomMatching => "no_random_matching",
            TrainMode::NoSimilarityPredictor => "no_similarity_predictor",
        })
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(TrainMode::Full),
            "no_random_matching" => Ok(TrainMode::NoRandomMatching),
            "no_similarity_predictor" => Ok(TrainMode::NoSimilarityPredictor),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Defaults to `ceil(pairs / batch_size)`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 128,
            lr: 3e-4,
            lr_min: 0.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            mode: TrainMode::Full,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.lr_min < 0.0 || self.lr_min > self.lr {
            return Err(Error::Config(format!("learning rates must satisfy 0 <= lr_min ({}) <= lr ({})", self.lr_min, self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn effective_steps_per_epoch(&self, n_pairs: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| n_pairs.div_ceil(self.batch_size))
    }
}

/// Training split: images and music-caption pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSet {
    pub images: Vec<FeatureRecord>,
    pub pairs: Vec<(FeatureRecord, FeatureRecord)>,
}

impl TrainSet {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::EmptySet("training images"));
        }
        if self.pairs.is_empty() {
            return Err(Error::EmptySet("training music-caption pairs"));
        }
        for (m, c) in &self.pairs {
            check_music_caption(m, c)?;
        }
        Ok(())
    }

    /// Sigma over every training image and music clip.
    pub fn sigma(&self) -> Result<SigmaStats> {
        let img: Vec<_> = self.images.iter().map(|r| r.va).collect();
        let mus: Vec<_> = self.pairs.iter().map(|(m, _)| m.va).collect();
        matching::compute_sigma(&img, &mus)
    }

    /// Maps a pair list onto `(image_index, pair_index)`.
    pub fn resolve(&self, pairs: &PairList) -> Result<Vec<(usize, usize)>> {
        let img: HashMap<&str, usize> = self.images.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let mus: HashMap<&str, usize> = self.pairs.iter().enumerate().map(|(i, (m, _))| (m.id.as_str(), i)).collect();
        pairs
            .entries()
            .iter()
            .map(|e| {
                let i = img.get(e.image_id.as_str()).ok_or_else(|| Error::Data(format!("pair list image `{}` is not in the training set", e.image_id)))?;
                let j = mus.get(e.music_id.as_str()).ok_or_else(|| Error::Data(format!("pair list music `{}` is not in the training set", e.music_id)))?;
                Ok((*i, *j))
            })
            .collect()
    }

    pub fn triplet(&self, image: usize, pair: usize, sigma: &SigmaStats) -> Triplet {
        let (music, caption) = self.pairs[pair].clone();
        let image = self.images[image].clone();
        let target_score = sigma.score(&image.va, &music.va);
        Triplet { image, music, caption, target_score }
    }
}

/// Everything `train` reads besides the model and the config.
pub struct TrainingData<'a> {
    pub train: &'a TrainSet,
    /// Frozen on the training split.
    pub sigma: SigmaStats,
    /// Required by [`TrainMode::NoRandomMatching`].
    pub fixed_pairs: Option<Vec<(usize, usize)>>,
    /// Evaluated after every epoch when present; never affects training.
    pub validation: Option<&'a [Triplet]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_parts: LossParts,
    pub lr: f64,
    pub validation: Option<EvalReport>,
}

/// The model for a fresh run: initialization draws from stream 0 of `seed`.
pub fn init_model(config: crate::model::ModelConfig, seed: u64) -> Result<MmvaModel> {
    MmvaModel::new(config, &mut SeededRng::new(seed).fork(0))
}

pub fn train(model: &mut MmvaModel, data: &TrainingData<'_>, config: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_with_observer(model, data, config, |_| {})
}

/// Runs `epochs * steps_per_epoch` AdamW steps with a per-step cosine
/// schedule and reports each finished epoch to `observer`.
///
/// Random streams derived from `config.seed`: 1 for batch sampling, 2 for
/// dropout, 3 for fixed-pair shuffling.
pub fn train_with_observer(
    model: &mut MmvaModel,
    data: &TrainingData<'_>,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    data.train.validate()?;
    let fixed = match (config.mode, &data.fixed_pairs) {
        (TrainMode::NoRandomMatching, Some(f)) if !f.is_empty() => {
            if f.iter().any(|&(i, j)| i >= data.train.images.len() || j >= data.train.pairs.len()) {
                return Err(Error::Data("fixed pair index out of range".into()));
            }
            Some(f.as_slice())
        }
        (TrainMode::NoRandomMatching, _) => {
            return Err(Error::Config("no_random_matching needs a non-empty fixed pair list".into()))
        }
        _ => None,
    };

    let steps_per_epoch = config.effective_steps_per_epoch(data.train.pairs.len());
    let mut history = Vec::new();
    if steps_per_epoch == 0 {
        return Ok(history);
    }
    let total_steps = config.epochs * steps_per_epoch;
    let with_sim = config.mode.uses_similarity();

    let root = SeededRng::new(config.seed);
    let mut sample_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);
    let mut order_rng = root.fork(3);
    let mut opt = AdamW::new(config.optimizer())?;
    let mut cursor = FixedCursor::new(fixed, &mut order_rng);

    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let mut sum = LossParts { similarity: with_sim.then_some(0.0), ..Default::default() };
        let mut lr = config.lr;
        for _ in 0..steps_per_epoch {
            lr = cosine_lr(step, total_steps, config.lr, config.lr_min)?;
            opt.set_lr(lr);
            let idx = match cursor.as_mut() {
                Some(c) => c.next_batch(config.batch_size, &mut order_rng),
                None => matching::sample_triplet_indices(&mut sample_rng, data.train.images.len(), data.train.pairs.len(), config.batch_size)?,
            };
            let parts = train_step(model, data, &idx, with_sim, &mut dropout_rng, &mut opt)?;
            sum.va_image += parts.va_image;
            sum.va_music += parts.va_music;
            sum.va_caption += parts.va_caption;
            if let (Some(acc), Some(s)) = (sum.similarity.as_mut(), parts.similarity) {
                *acc += s;
            }
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let mean_parts = LossParts {
            va_image: sum.va_image / n,
            va_music: sum.va_music / n,
            va_caption: sum.va_caption / n,
            similarity: sum.similarity.map(|s| s / n),
        };
        let validation = match data.validation {
            Some(v) if !v.is_empty() => Some(evaluate(&*model, v)?),
            _ => None,
        };
        let stats = EpochStats { epoch, mean_loss: mean_parts.total(), mean_parts, lr, validation };
        log::debug!("epoch {epoch}: loss {:.6}", stats.mean_loss);
        observer(&stats);
        history.push(stats);
    }
    Ok(history)
}

struct FixedCursor<'a> {
    pairs: &'a [(usize, usize)],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> FixedCursor<'a> {
    fn new(pairs: Option<&'a [(usize, usize)]>, rng: &mut SeededRng) -> Option<Self> {
        let pairs = pairs?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut order);
        Some(Self { pairs, order, pos: 0 })
    }

    /// Walks a shuffled order, reshuffling after each full pass.
    fn next_batch(&mut self, size: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.pairs[self.order[self.pos]]);
            self.pos += 1;
        }
        out
    }
}

/// Inputs and targets of one batch of `(image, pair)` indices.
pub fn assemble_batch(train: &TrainSet, idx: &[(usize, usize)], sigma: &SigmaStats) -> Result<(TripletBatch, [Tensor2; 3], Tensor2)> {
    let imgs: Vec<&FeatureRecord> = idx.iter().map(|&(i, _)| &train.images[i]).collect();
    let mus: Vec<&FeatureRecord> = idx.iter().map(|&(_, j)| &train.pairs[j].0).collect();
    let caps: Vec<&FeatureRecord> = idx.iter().map(|&(_, j)| &train.pairs[j].1).collect();
    let batch = TripletBatch::from_records(&imgs, &mus, &caps)?;
    let va_target = |rs: &[&FeatureRecord]| Tensor2::from_vec(rs.len(), 2, rs.iter().flat_map(|r| r.va.as_array()).collect());
    let sim: Vec<f64> = imgs.iter().zip(&mus).map(|(i, m)| sigma.score(&i.va, &m.va)).collect();
    Ok((batch, [va_target(&imgs)?, va_target(&mus)?, va_target(&caps)?], Tensor2::from_vec(idx.len(), 1, sim)?))
}

/// Loss parts and output gradients of a batch, without touching parameters.
pub fn batch_loss(
    model: &MmvaModel,
    batch: TripletBatch,
    targets: &[Tensor2; 3],
    sim_target: &Tensor2,
    with_sim: bool,
    mode: &mut Mode<'_>,
) -> Result<(LossParts, OutputGrads, crate::model::ForwardCache)> {
    let (out, cache) = model.forward_batch(batch, mode, with_sim)?;
    let (l_img, g_img) = nn::mse_loss(&out.va[0], &targets[0])?;
    let (l_mus, g_mus) = nn::mse_loss(&out.va[1], &targets[1])?;
    let (l_cap, g_cap) = nn::mse_loss(&out.va[2], &targets[2])?;
    let (similarity, g_sim) = match &out.similarity {
        Some(s) => {
            let (l, g) = nn::mse_loss(s, sim_target)?;
            (Some(l), Some(g))
        }
        None => (None, None),
    };
    let parts = LossParts { va_image: l_img, va_music: l_mus, va_caption: l_cap, similarity };
    Ok((parts, OutputGrads { va: [g_img, g_mus, g_cap], similarity: g_sim }, cache))
}

fn train_step(
    model: &mut MmvaModel,
    data: &TrainingData<'_>,
    idx: &[(usize, usize)],
    with_sim: bool,
    dropout_rng: &mut SeededRng,
    opt: &mut AdamW,
) -> Result<LossParts> {
    let (batch, targets, sim_target) = assemble_batch(data.train, idx, &data.sigma)?;
    model.zero_grad();
    let (parts, grads, cache) = batch_loss(model, batch, &targets, &sim_target, with_sim, &mut Mode::Train(dropout_rng))?;
    if !parts.total().is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    model.backward(&cache, &grads)?;
    opt.step(model.trainable_params_mut(with_sim));
    Ok(parts)
}
