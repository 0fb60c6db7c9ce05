//! The MMVA network: per-modality adapters, three VA predictors and the
//! similarity predictor.
//!
//! ```text
//! image   [512]        -> linear 512->512                      -> z_img [512] -> VA head -> (v, a)
//! music   [13 x 768]   -> layer mix (13 -> 1) -> linear 768->512 -> z_mus [512] -> VA head -> (v, a)
//! caption [13 x 768]   -> layer mix (13 -> 1) -> linear 768->512 -> z_cap [512] -> VA head -> (v, a)
//! concat(z_img, z_mus, z_cap) [1536] -> similarity head -> s
//! ```
//!
//! Every head is `linear(->512) relu layernorm dropout linear(512->512)
//! relu layernorm dropout linear(->out) sigmoid`; the VA heads emit 2
//! values, the similarity head 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ParamTensor, Tensor2, LAYER_NORM_EPS};
use crate::rng::SeededRng;
use crate::types::{FeatureDims, FeatureRecord, Features, Modality, Triplet, VaVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub features: FeatureDims,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { features: FeatureDims::default(), embed_dim: 512, hidden_dim: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub dropout: f64,
    /// Keep the image projection fixed at its initial identity, so image
    /// class tokens feed the VA head directly.
    pub freeze_image_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dims: ModelDims::default(), dropout: 0.5, freeze_image_projection: false }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let f = &d.features;
        if [f.image_dim, f.layers, f.token_dim, d.embed_dim, d.hidden_dim].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if f.image_dim != d.embed_dim {
            return Err(Error::Config(format!(
                "image features ({}) must match the embedding width ({}) for the identity-initialized projection",
                f.image_dim, d.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Dropout behaviour for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut SeededRng),
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut SeededRng> {
        match self {
            Mode::Eval => None,
            Mode::Train(rng) => Some(&mut **rng),
        }
    }
}

/// Output of a modality adapter for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEmbedding(pub Vec<f64>);

/// `concat(z_img, z_mus, z_cap)`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalEmbedding(pub Vec<f64>);

impl MultimodalEmbedding {
    pub fn concat(img: &ModalityEmbedding, mus: &ModalityEmbedding, cap: &ModalityEmbedding) -> Self {
        let mut m = Vec::with_capacity(img.0.len() + mus.0.len() + cap.0.len());
        m.extend_from_slice(&img.0);
        m.extend_from_slice(&mus.0);
        m.extend_from_slice(&cap.0);
        Self(m)
    }
}

fn init_uniform(rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize) -> Tensor2 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("init shape")
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamTensor,
    b: ParamTensor,
}

impl Linear {
    fn new(prefix: &str, w: Tensor2) -> Self {
        let out = w.cols();
        Self { w: ParamTensor::new(format!("{prefix}.weight"), w), b: ParamTensor::vector(format!("{prefix}.bias"), vec![0.0; out]) }
    }

    fn init(prefix: &str, rng: &mut SeededRng, inp: usize, out: usize) -> Self {
        Self::new(prefix, init_uniform(rng, inp, out, inp))
    }

    fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        nn::linear_fwd(x, &self.w.value, self.b.value.data())
    }

    fn backward(&mut self, x: &Tensor2, dy: &Tensor2) -> Result<Tensor2> {
        nn::linear_bwd_acc(Default::default(), x, &self.w.value, dy, &mut self.w.grad, self.b.grad.data_mut())
    }

    fn params(&self) -> [&ParamTensor; 2] {
        [&self.w, &self.b]
    }

    fn params_mut(&mut self) -> [&mut ParamTensor; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gamma: ParamTensor,
    beta: ParamTensor,
}

impl LayerNorm {
    fn new(prefix: &str, width: usize) -> Self {
        Self {
            gamma: ParamTensor::vector(format!("{prefix}.gamma"), vec![1.0; width]),
            beta: ParamTensor::vector(format!("{prefix}.beta"), vec![0.0; width]),
        }
    }
}

struct HeadCache {
    x: Tensor2,
    h1: Tensor2,
    ln1: nn::LayerNormCache,
    mask1: Option<Vec<f64>>,
    d1: Tensor2,
    h2: Tensor2,
    ln2: nn::LayerNormCache,
    mask2: Option<Vec<f64>>,
    d2: Tensor2,
    out: Tensor2,
}

/// The shared predictor architecture.
#[derive(Debug, Clone)]
pub struct Head {
    l1: Linear,
    n1: LayerNorm,
    l2: Linear,
    n2: LayerNorm,
    l3: Linear,
    dropout: f64,
}

impl Head {
    fn init(prefix: &str, rng: &mut SeededRng, inp: usize, hidden: usize, out: usize, dropout: f64) -> Self {
        Self {
            l1: Linear::init(&format!("{prefix}.l1"), rng, inp, hidden),
            n1: LayerNorm::new(&format!("{prefix}.ln1"), hidden),
            l2: Linear::init(&format!("{prefix}.l2"), rng, hidden, hidden),
            n2: LayerNorm::new(&format!("{prefix}.ln2"), hidden),
            l3: Linear::init(&format!("{prefix}.l3"), rng, hidden, out),
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.l1.w.value.rows()
    }

    fn forward(&self, x: &Tensor2, mode: &mut Mode<'_>) -> Result<(Tensor2, HeadCache)> {
        let h1 = self.l1.forward(x)?;
        let (n1, ln1) = nn::layer_norm_fwd(&nn::relu_fwd(&h1), self.n1.gamma.value.data(), self.n1.beta.value.data(), LAYER_NORM_EPS)?;
        let (d1, mask1) = nn::dropout(&n1, self.dropout, mode.rng())?;
        let h2 = self.l2.forward(&d1)?;
        let (n2, ln2) = nn::layer_norm_fwd(&nn::relu_fwd(&h2), self.n2.gamma.value.data(), self.n2.beta.value.data(), LAYER_NORM_EPS)?;
        let (d2, mask2) = nn::dropout(&n2, self.dropout, mode.rng())?;
        let out = nn::sigmoid_fwd(&self.l3.forward(&d2)?);
        let cache = HeadCache { x: x.clone(), h1, ln1, mask1, d1, h2, ln2, mask2, d2, out: out.clone() };
        Ok((out, cache))
    }

    fn backward(&mut self, c: &HeadCache, dout: &Tensor2) -> Result<Tensor2> {
        let g = nn::sigmoid_bwd(&c.out, dout);
        let g = self.l3.backward(&c.d2, &g)?;
        let g = nn::dropout_bwd(c.mask2.as_deref(), &g);
        let g = self.layer_norm_backward(2, &c.ln2, &g)?;
        let g = nn::relu_bwd(&c.h2, &g);
        let g = self.l2.backward(&c.d1, &g)?;
        let g = nn::dropout_bwd(c.mask1.as_deref(), &g);
        let g = self.layer_norm_backward(1, &c.ln1, &g)?;
        let g = nn::relu_bwd(&c.h1, &g);
        self.l1.backward(&c.x, &g)
    }

    fn layer_norm_backward(&mut self, which: u8, cache: &nn::LayerNormCache, dy: &Tensor2) -> Result<Tensor2> {
        let ln = if which == 1 { &mut self.n1 } else { &mut self.n2 };
        let grads = nn::layer_norm_bwd(cache, ln.gamma.value.data(), dy)?;
        accumulate(&mut ln.gamma, &grads.dgamma);
        accumulate(&mut ln.beta, &grads.dbeta);
        Ok(grads.dx)
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = Vec::with_capacity(10);
        v.extend(self.l1.params());
        v.extend([&self.n1.gamma, &self.n1.beta]);
        v.extend(self.l2.params());
        v.extend([&self.n2.gamma, &self.n2.beta]);
        v.extend(self.l3.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = Vec::with_capacity(10);
        v.extend(self.l1.params_mut());
        v.extend([&mut self.n1.gamma, &mut self.n1.beta]);
        v.extend(self.l2.params_mut());
        v.extend([&mut self.n2.gamma, &mut self.n2.beta]);
        v.extend(self.l3.params_mut());
        v
    }

    /// Closed-form parameter count of a head.
    pub fn parameter_count(inp: usize, hidden: usize, out: usize) -> usize {
        (inp * hidden + hidden) + 2 * hidden + (hidden * hidden + hidden) + 2 * hidden + (hidden * out + out)
    }
}

fn accumulate(p: &mut ParamTensor, g: &[f64]) {
    p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

#[derive(Debug, Clone)]
struct StackAdapter {
    mix_w: ParamTensor,
    mix_b: ParamTensor,
    proj: Linear,
    layers: usize,
}

impl StackAdapter {
    fn init(prefix: &str, rng: &mut SeededRng, dims: &ModelDims) -> Self {
        let layers = dims.features.layers;
        Self {
            mix_w: ParamTensor::vector(format!("{prefix}.mix.weight"), vec![1.0 / layers as f64; layers]),
            mix_b: ParamTensor::vector(format!("{prefix}.mix.bias"), vec![0.0]),
            proj: Linear::init(&format!("{prefix}.proj"), rng, dims.features.token_dim, dims.embed_dim),
            layers,
        }
    }

    fn forward(&self, h: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let mixed = nn::layer_aggregate_fwd(h, self.layers, self.mix_w.value.data(), self.mix_b.value.data()[0])?;
        let z = self.proj.forward(&mixed)?;
        Ok((z, mixed))
    }

    fn backward(&mut self, h: &Tensor2, mixed: &Tensor2, dz: &Tensor2) -> Result<()> {
        let dmixed = self.proj.backward(mixed, dz)?;
        let g = nn::layer_aggregate_bwd(h, self.layers, self.mix_w.value.data(), &dmixed, false)?;
        accumulate(&mut self.mix_w, &g.dw);
        self.mix_b.grad.data_mut()[0] += g.db;
        Ok(())
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let [w, b] = self.proj.params();
        vec![&self.mix_w, &self.mix_b, w, b]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let [w, b] = self.proj.params_mut();
        vec![&mut self.mix_w, &mut self.mix_b, w, b]
    }
}

/// Stacked input features of a batch, one row per sample.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub image: Tensor2,
    pub music: Tensor2,
    pub caption: Tensor2,
}

impl TripletBatch {
    pub fn from_triplets(triplets: &[Triplet]) -> Result<Self> {
        let imgs: Vec<&FeatureRecord> = triplets.iter().map(|t| &t.image).collect();
        let mus: Vec<&FeatureRecord> = triplets.iter().map(|t| &t.music).collect();
        let caps: Vec<&FeatureRecord> = triplets.iter().map(|t| &t.caption).collect();
        Self::from_records(&imgs, &mus, &caps)
    }

    pub fn from_records(images: &[&FeatureRecord], music: &[&FeatureRecord], captions: &[&FeatureRecord]) -> Result<Self> {
        if images.len() != music.len() || music.len() != captions.len() {
            return Err(Error::shape("triplet batch parts differ in length"));
        }
        Ok(Self { image: stack_features(images)?, music: stack_features(music)?, caption: stack_features(captions)? })
    }

    pub fn len(&self) -> usize {
        self.image.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacks records of one modality into a batch tensor.
pub fn stack_features(records: &[&FeatureRecord]) -> Result<Tensor2> {
    let width = records.first().map_or(0, |r| r.features.values().len());
    let mut data = Vec::with_capacity(records.len() * width);
    for r in records {
        let v = r.features.values();
        if v.len() != width {
            return Err(Error::shape(format!("record `{}` has {} feature values, expected {width}", r.id, v.len())));
        }
        data.extend_from_slice(v);
    }
    Tensor2::from_vec(records.len(), width, data)
}

/// Per-sample predictions for a batch: VA for image, music, caption (each
/// `N x 2`) and, when requested, similarity (`N x 1`).
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub va: [Tensor2; 3],
    pub similarity: Option<Tensor2>,
}

pub struct ForwardCache {
    inputs: TripletBatch,
    image_z: Tensor2,
    music_mixed: Tensor2,
    caption_mixed: Tensor2,
    heads: [HeadCache; 3],
    similarity: Option<HeadCache>,
}

/// Gradients of the loss with respect to [`BatchOutput`].
pub struct OutputGrads {
    pub va: [Tensor2; 3],
    pub similarity: Option<Tensor2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletPrediction {
    pub image: VaVector,
    pub music: VaVector,
    pub caption: VaVector,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct MmvaModel {
    config: ModelConfig,
    image_proj: Linear,
    music: StackAdapter,
    caption: StackAdapter,
    va_heads: [Head; 3],
    similarity: Head,
}

impl MmvaModel {
    /// Fan-in scaled uniform weights, zero biases, identity image projection
    /// and uniform layer mixing.
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let image_proj = Linear::new("image.proj", Tensor2::identity(d.embed_dim));
        let music = StackAdapter::init("music", rng, &d);
        let caption = StackAdapter::init("caption", rng, &d);
        let va_heads = [
            Head::init("va_image", rng, d.embed_dim, d.hidden_dim, 2, config.dropout),
            Head::init("va_music", rng, d.embed_dim, d.hidden_dim, 2, config.dropout),
            Head::init("va_caption", rng, d.embed_dim, d.hidden_dim, 2, config.dropout),
        ];
        let similarity = Head::init("similarity", rng, 3 * d.embed_dim, d.hidden_dim, 1, config.dropout);
        Ok(Self { config, image_proj, music, caption, va_heads, similarity })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, &mut SeededRng::new(0))?;
        for p in m.params_mut() {
            p.value.fill(0.0);
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.config.dims
    }

    /// Every parameter, in a fixed order.
    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v: Vec<&ParamTensor> = self.image_proj.params().into();
        v.extend(self.music.params());
        v.extend(self.caption.params());
        for h in &self.va_heads {
            v.extend(h.params());
        }
        v.extend(self.similarity.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = self.image_proj.params_mut().into();
        v.extend(self.music.params_mut());
        v.extend(self.caption.params_mut());
        for h in &mut self.va_heads {
            v.extend(h.params_mut());
        }
        v.extend(self.similarity.params_mut());
        v
    }

    /// Parameters the optimizer may update.
    pub fn trainable_params_mut(&mut self, with_similarity: bool) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = Vec::new();
        if !self.config.freeze_image_projection {
            v.extend(self.image_proj.params_mut());
        }
        v.extend(self.music.params_mut());
        v.extend(self.caption.params_mut());
        for h in &mut self.va_heads {
            v.extend(h.params_mut());
        }
        if with_similarity {
            v.extend(self.similarity.params_mut());
        }
        v
    }

    pub fn param(&self, name: &str) -> Option<&ParamTensor> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn va_head_parameter_count(&self, modality: Modality) -> usize {
        self.va_heads[head_index(modality)].params().iter().map(|p| p.len()).sum()
    }

    pub fn similarity_parameter_count(&self) -> usize {
        self.similarity.params().iter().map(|p| p.len()).sum()
    }

    fn embed_batch(&self, modality: Modality, x: &Tensor2) -> Result<Tensor2> {
        Ok(match modality {
            Modality::Image => self.image_proj.forward(x)?,
            Modality::Music => self.music.forward(x)?.0,
            Modality::Caption => self.caption.forward(x)?.0,
        })
    }

    fn check_input(&self, modality: Modality, x: &Tensor2) -> Result<()> {
        let f = &self.config.dims.features;
        let want = match modality {
            Modality::Image => f.image_dim,
            Modality::Music | Modality::Caption => f.layers * f.token_dim,
        };
        if x.cols() != want {
            return Err(Error::shape(format!("{modality} input has {} columns, expected {want}", x.cols())));
        }
        Ok(())
    }

    /// Embeddings (`N x embed_dim`) for a batch of one modality.
    pub fn embed_features(&self, modality: Modality, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(modality, x)?;
        self.embed_batch(modality, x)
    }

    /// VA predictions (`N x 2`) from embeddings.
    pub fn predict_va_batch(&self, modality: Modality, z: &Tensor2, mode: &mut Mode<'_>) -> Result<Tensor2> {
        if z.cols() != self.config.dims.embed_dim {
            return Err(Error::shape(format!("embedding width {} != {}", z.cols(), self.config.dims.embed_dim)));
        }
        Ok(self.va_heads[head_index(modality)].forward(z, mode)?.0)
    }

    /// Features to VA in one call, eval mode.
    pub fn predict_records(&self, records: &[&FeatureRecord]) -> Result<Vec<VaVector>> {
        let Some(first) = records.first() else { return Ok(Vec::new()) };
        let modality = first.modality;
        if let Some(r) = records.iter().find(|r| r.modality != modality) {
            return Err(Error::MixedModalities(modality.to_string(), r.modality.to_string()));
        }
        let x = stack_features(records)?;
        let z = self.embed_features(modality, &x)?;
        let va = self.predict_va_batch(modality, &z, &mut Mode::Eval)?;
        (0..va.rows()).map(|r| to_va(va.row(r))).collect()
    }

    pub fn embed(&self, record: &FeatureRecord, _mode: &mut Mode<'_>) -> Result<ModalityEmbedding> {
        let x = stack_features(&[record])?;
        self.check_input(record.modality, &x)?;
        match (&record.modality, &record.features) {
            (Modality::Image, Features::Flat(_)) | (Modality::Music | Modality::Caption, Features::Stacked { .. }) => {}
            (m, f) => return Err(Error::shape(format!("{m} record with features of shape {:?}", f.shape()))),
        }
        Ok(ModalityEmbedding(self.embed_batch(record.modality, &x)?.into_vec()))
    }

    pub fn predict_va(&self, z: &ModalityEmbedding, modality: Modality, mode: &mut Mode<'_>) -> Result<VaVector> {
        let x = Tensor2::from_vec(1, z.0.len(), z.0.clone())?;
        let out = self.predict_va_batch(modality, &x, mode)?;
        to_va(out.row(0))
    }

    pub fn predict_similarity(&self, m: &MultimodalEmbedding, mode: &mut Mode<'_>) -> Result<f64> {
        let want = 3 * self.config.dims.embed_dim;
        if m.0.len() != want {
            return Err(Error::shape(format!("multimodal embedding has {} values, expected {want}", m.0.len())));
        }
        let x = Tensor2::from_vec(1, want, m.0.clone())?;
        Ok(self.similarity.forward(&x, mode)?.0.get(0, 0))
    }

    pub fn forward_triplet(&self, t: &Triplet, mode: &mut Mode<'_>) -> Result<TripletPrediction> {
        let z_img = self.embed(&t.image, mode)?;
        let z_mus = self.embed(&t.music, mode)?;
        let z_cap = self.embed(&t.caption, mode)?;
        let image = self.predict_va(&z_img, Modality::Image, mode)?;
        let music = self.predict_va(&z_mus, Modality::Music, mode)?;
        let caption = self.predict_va(&z_cap, Modality::Caption, mode)?;
        let m = MultimodalEmbedding::concat(&z_img, &z_mus, &z_cap);
        let similarity = self.predict_similarity(&m, mode)?;
        Ok(TripletPrediction { image, music, caption, similarity })
    }

    /// Batched forward pass keeping what the backward pass needs.
    pub fn forward_batch(&self, batch: TripletBatch, mode: &mut Mode<'_>, with_similarity: bool) -> Result<(BatchOutput, ForwardCache)> {
        self.check_input(Modality::Image, &batch.image)?;
        self.check_input(Modality::Music, &batch.music)?;
        self.check_input(Modality::Caption, &batch.caption)?;
        let z_img = self.image_proj.forward(&batch.image)?;
        let (z_mus, music_mixed) = self.music.forward(&batch.music)?;
        let (z_cap, caption_mixed) = self.caption.forward(&batch.caption)?;
        let (va_img, c_img) = self.va_heads[0].forward(&z_img, mode)?;
        let (va_mus, c_mus) = self.va_heads[1].forward(&z_mus, mode)?;
        let (va_cap, c_cap) = self.va_heads[2].forward(&z_cap, mode)?;
        let (similarity, sim_cache) = if with_similarity {
            let m = Tensor2::hcat(&[&z_img, &z_mus, &z_cap])?;
            let (s, c) = self.similarity.forward(&m, mode)?;
            (Some(s), Some(c))
        } else {
            (None, None)
        };
        let cache = ForwardCache {
            inputs: batch,
            image_z: z_img,
            music_mixed,
            caption_mixed,
            heads: [c_img, c_mus, c_cap],
            similarity: sim_cache,
        };
        Ok((BatchOutput { va: [va_img, va_mus, va_cap], similarity }, cache))
    }

    /// Accumulates parameter gradients for the given output gradients.
    pub fn backward(&mut self, cache: &ForwardCache, grads: &OutputGrads) -> Result<()> {
        let e = self.config.dims.embed_dim;
        let mut dz: Vec<Tensor2> = Vec::with_capacity(3);
        for (k, head) in self.va_heads.iter_mut().enumerate() {
            dz.push(head.backward(&cache.heads[k], &grads.va[k])?);
        }
        if let (Some(c), Some(ds)) = (&cache.similarity, &grads.similarity) {
            let dm = self.similarity.backward(c, ds)?;
            for (acc, part) in dz.iter_mut().zip(dm.hsplit(&[e, e, e])?) {
                acc.add_assign(&part)?;
            }
        }
        if !self.config.freeze_image_projection {
            self.image_proj.backward(&cache.inputs.image, &dz[0])?;
        }
        debug_assert_eq!(cache.image_z.cols(), e);
        self.music.backward(&cache.inputs.music, &cache.music_mixed, &dz[1])?;
        self.caption.backward(&cache.inputs.caption, &cache.caption_mixed, &dz[2])?;
        Ok(())
    }
}

fn head_index(m: Modality) -> usize {
    match m {
        Modality::Image => 0,
        Modality::Music => 1,
        Modality::Caption => 2,
    }
}

pub(crate) fn to_va(row: &[f64]) -> Result<VaVector> {
    VaVector::new(row[0], row[1])
}
