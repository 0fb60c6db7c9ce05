//! Shared fixtures: finite-difference gradient checks, brute-force oracles
//! and small synthetic corpora.

#![allow(dead_code)]

use mmva::model::{MmvaModel, ModelConfig, ModelDims, Mode, TripletBatch};
use mmva::nn::{self, Tensor2};
use mmva::training::{assemble_batch, batch_loss};
use mmva::types::FeatureDims;
use mmva::{Result, SeededRng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel: f64,
}

impl GradReport {
    fn new(name: &str) -> Self {
        Self { name: name.to_owned(), instances: 0, coordinates: 0, max_rel: 0.0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.coordinates += 1;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        self.max_rel = self.max_rel.max(rel);
    }

    pub fn ok(&self) -> bool {
        self.instances >= INSTANCES && self.coordinates > 0 && self.max_rel < FD_TOLERANCE
    }
}

fn random(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` with respect to `x[k]`.
fn central(x: &mut [f64], k: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[k];
    x[k] = orig + FD_STEP;
    let up = f(x);
    x[k] = orig - FD_STEP;
    let down = f(x);
    x[k] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn check_all(report: &mut GradReport, x: &mut [f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
    for (k, &a) in analytic.iter().enumerate().take(x.len()) {
        let n = central(x, k, &f);
        report.record(a, n);
    }
}

/// Projects a layer output onto a fixed random direction, so every output
/// element contributes to the scalar being differentiated.
pub fn linear_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("linear");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let (n, i, o) = (3, 6, 5);
        let x = random(&mut rng, n, i, 1.0);
        let w = random(&mut rng, i, o, 0.5);
        let b: Vec<f64> = (0..o).map(|_| rng.normal()).collect();
        let proj = random(&mut rng, n, o, 1.0);
        let g = nn::linear_bwd(&x, &w, &proj).unwrap();
        let loss = |x: &Tensor2, w: &Tensor2, b: &[f64]| dot(&nn::linear_fwd(x, w, b).unwrap(), &proj);
        let mut xv = x.data().to_vec();
        check_all(&mut r, &mut xv, g.dx.data(), |v| loss(&Tensor2::from_vec(n, i, v.to_vec()).unwrap(), &w, &b));
        let mut wv = w.data().to_vec();
        check_all(&mut r, &mut wv, g.dw.data(), |v| loss(&x, &Tensor2::from_vec(i, o, v.to_vec()).unwrap(), &b));
        let mut bv = b.clone();
        check_all(&mut r, &mut bv, &g.db, |v| loss(&x, &w, v));
        r.instances += 1;
    }
    r
}

pub fn relu_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("relu");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        // Keep inputs away from the kink.
        let data: Vec<f64> = (0..20)
            .map(|_| {
                let v = rng.normal();
                if v.abs() < 1e-3 { 0.5 } else { v }
            })
            .collect();
        let x = Tensor2::from_vec(4, 5, data).unwrap();
        let proj = random(&mut rng, 4, 5, 1.0);
        let g = nn::relu_bwd(&x, &proj);
        let mut xv = x.data().to_vec();
        check_all(&mut r, &mut xv, g.data(), |v| dot(&nn::relu_fwd(&Tensor2::from_vec(4, 5, v.to_vec()).unwrap()), &proj));
        r.instances += 1;
    }
    r
}

pub fn sigmoid_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("sigmoid");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let x = random(&mut rng, 3, 4, 3.0);
        let proj = random(&mut rng, 3, 4, 1.0);
        let g = nn::sigmoid_bwd(&nn::sigmoid_fwd(&x), &proj);
        let mut xv = x.data().to_vec();
        check_all(&mut r, &mut xv, g.data(), |v| dot(&nn::sigmoid_fwd(&Tensor2::from_vec(3, 4, v.to_vec()).unwrap()), &proj));
        r.instances += 1;
    }
    r
}

pub fn layer_norm_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("layer_norm");
    let eps = nn::LAYER_NORM_EPS;
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let (n, f) = (3, 7);
        let x = random(&mut rng, n, f, 1.0);
        let gamma: Vec<f64> = (0..f).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        let beta: Vec<f64> = (0..f).map(|_| 0.3 * rng.normal()).collect();
        let proj = random(&mut rng, n, f, 1.0);
        let (_, cache) = nn::layer_norm_fwd(&x, &gamma, &beta, eps).unwrap();
        let g = nn::layer_norm_bwd(&cache, &gamma, &proj).unwrap();
        let loss = |x: &Tensor2, gm: &[f64], bt: &[f64]| dot(&nn::layer_norm_fwd(x, gm, bt, eps).unwrap().0, &proj);
        let mut xv = x.data().to_vec();
        check_all(&mut r, &mut xv, g.dx.data(), |v| loss(&Tensor2::from_vec(n, f, v.to_vec()).unwrap(), &gamma, &beta));
        let mut gv = gamma.clone();
        check_all(&mut r, &mut gv, &g.dgamma, |v| loss(&x, v, &beta));
        let mut bv = beta.clone();
        check_all(&mut r, &mut bv, &g.dbeta, |v| loss(&x, &gamma, v));
        r.instances += 1;
    }
    r
}

/// The mask is frozen by replaying the same dropout stream.
pub fn dropout_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("dropout");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let x = random(&mut rng, 4, 6, 1.0);
        let proj = random(&mut rng, 4, 6, 1.0);
        let mask_seed = 1000 + inst as u64;
        let (_, mask) = nn::dropout(&x, 0.5, Some(&mut SeededRng::new(mask_seed))).unwrap();
        let g = nn::dropout_bwd(mask.as_deref(), &proj);
        let mut xv = x.data().to_vec();
        check_all(&mut r, &mut xv, g.data(), |v| {
            let t = Tensor2::from_vec(4, 6, v.to_vec()).unwrap();
            dot(&nn::dropout(&t, 0.5, Some(&mut SeededRng::new(mask_seed))).unwrap().0, &proj)
        });
        r.instances += 1;
    }
    r
}

pub fn aggregate_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("layer_aggregate");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let (n, layers, dim) = (3, 4, 5);
        let h = random(&mut rng, n, layers * dim, 1.0);
        let w: Vec<f64> = (0..layers).map(|_| rng.normal()).collect();
        let b = rng.normal();
        let proj = random(&mut rng, n, dim, 1.0);
        let g = nn::layer_aggregate_bwd(&h, layers, &w, &proj, true).unwrap();
        let loss = |h: &Tensor2, w: &[f64], b: f64| dot(&nn::layer_aggregate_fwd(h, layers, w, b).unwrap(), &proj);
        let mut hv = h.data().to_vec();
        check_all(&mut r, &mut hv, g.dh.data(), |v| loss(&Tensor2::from_vec(n, layers * dim, v.to_vec()).unwrap(), &w, b));
        let mut wv = w.clone();
        check_all(&mut r, &mut wv, &g.dw, |v| loss(&h, v, b));
        let mut bv = vec![b];
        check_all(&mut r, &mut bv, &[g.db], |v| loss(&h, &w, v[0]));
        r.instances += 1;
    }
    r
}

pub fn mse_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("mse_loss");
    for inst in 0..INSTANCES {
        let mut rng = SeededRng::new(seed).fork(inst as u64);
        let pred = random(&mut rng, 5, 2, 1.0);
        let target = random(&mut rng, 5, 2, 1.0);
        let (_, g) = nn::mse_loss(&pred, &target).unwrap();
        let mut pv = pred.data().to_vec();
        check_all(&mut r, &mut pv, g.data(), |v| nn::mse_loss(&Tensor2::from_vec(5, 2, v.to_vec()).unwrap(), &target).unwrap().0);
        r.instances += 1;
    }
    r
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        dims: ModelDims { features: FeatureDims { image_dim: 6, layers: 3, token_dim: 4 }, embed_dim: 6, hidden_dim: 5 },
        ..Default::default()
    }
}

struct EndToEnd {
    model: MmvaModel,
    batch: TripletBatch,
    targets: [Tensor2; 3],
    sim: Tensor2,
    dropout_seed: u64,
}

impl EndToEnd {
    fn new(config: ModelConfig, batch_size: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut model = MmvaModel::new(config, &mut rng.fork(0)).unwrap();
        // Move away from the structured initialization (identity projection,
        // uniform mixing, unit gamma) so every term is exercised.
        for p in model.params_mut() {
            for v in p.value.data_mut() {
                *v += 0.05 * rng.normal();
            }
        }
        let d = config.dims.features;
        let data = mmva::synthetic::generate(&mmva::synthetic::SyntheticConfig {
            n_train: batch_size,
            n_test: 1,
            dims: d,
            seed,
            ..Default::default()
        })
        .unwrap();
        let idx: Vec<(usize, usize)> = (0..batch_size).map(|i| (i, (i + 1) % batch_size)).collect();
        let (batch, targets, sim) = assemble_batch(&data.train, &idx, &data.sigma).unwrap();
        Self { model, batch, targets, sim, dropout_seed: seed ^ 0x5eed }
    }

    fn loss(&self, model: &MmvaModel) -> Result<f64> {
        let mut rng = SeededRng::new(self.dropout_seed);
        let (parts, _, _) = batch_loss(model, self.batch.clone(), &self.targets, &self.sim, true, &mut Mode::Train(&mut rng))?;
        Ok(parts.total())
    }

    fn analytic(&mut self) -> Vec<(String, Vec<f64>)> {
        let mut rng = SeededRng::new(self.dropout_seed);
        self.model.zero_grad();
        let (_, grads, cache) =
            batch_loss(&self.model, self.batch.clone(), &self.targets, &self.sim, true, &mut Mode::Train(&mut rng)).unwrap();
        self.model.backward(&cache, &grads).unwrap();
        self.model.params().iter().map(|p| (p.name.clone(), p.grad.data().to_vec())).collect()
    }

    fn numeric(&mut self, name: &str, k: usize, h: f64) -> f64 {
        let orig = self.model.param(name).unwrap().value.data()[k];
        let at = |v: f64, e: &mut Self| {
            e.model.param_mut(name).unwrap().value.data_mut()[k] = v;
            e.loss(&e.model).unwrap()
        };
        let up = at(orig + h, self);
        let down = at(orig - h, self);
        self.model.param_mut(name).unwrap().value.data_mut()[k] = orig;
        (up - down) / (2.0 * h)
    }
}

/// Every parameter coordinate of a small model, dropout active with a
/// replayed mask, total loss including the similarity term.
pub fn end_to_end_check(seed: u64) -> GradReport {
    let mut r = GradReport::new("end_to_end_small");
    for inst in 0..INSTANCES {
        let mut e = EndToEnd::new(small_model_config(), 3, seed + inst as u64);
        for (name, g) in e.analytic() {
            for (k, &a) in g.iter().enumerate() {
                r.record(a, e.numeric(&name, k, FD_STEP));
            }
        }
        r.instances += 1;
    }
    r
}

/// Sampled coordinates of a full-size model, a few per parameter tensor.
///
/// The layer-mix weights and bias move all 768 token features at once, so
/// the loss curves sharply along them and a 1e-5 step leaves truncation
/// error around 3e-4. Full-size checks therefore take their own step.
pub fn end_to_end_full_check(seed: u64, per_tensor: usize, step: f64) -> GradReport {
    let mut r = GradReport::new("end_to_end_full_sampled");
    for inst in 0..INSTANCES {
        let mut e = EndToEnd::new(ModelConfig::default(), 2, seed + inst as u64);
        let mut pick = SeededRng::new(seed ^ 0xfeed).fork(inst as u64);
        for (name, g) in e.analytic() {
            for _ in 0..per_tensor {
                let k = pick.index(g.len());
                r.record(g[k], e.numeric(&name, k, step));
            }
        }
        r.instances += 1;
    }
    r
}

pub fn all_gradient_checks(seed: u64) -> Vec<GradReport> {
    vec![
        linear_check(seed),
        relu_check(seed),
        sigmoid_check(seed),
        layer_norm_check(seed),
        dropout_check(seed),
        aggregate_check(seed),
        mse_check(seed),
        end_to_end_check(seed),
    ]
}
