use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{to_va, MmvaModel, Mode, TripletBatch, TripletPrediction};
use crate::types::{Triplet, VaVector};

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VaMetrics {
    pub v_mse: f64,
    pub v_mae: f64,
    pub a_mse: f64,
    pub a_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub image: VaMetrics,
    pub music: VaMetrics,
    pub caption: VaMetrics,
    pub similarity: ErrorMetrics,
    pub count: usize,
}

/// Anything that maps a triplet to predicted VA and similarity.
pub trait TripletPredictor {
    fn predict_batch(&self, triplets: &[Triplet]) -> Result<Vec<TripletPrediction>>;
}

impl TripletPredictor for MmvaModel {
    fn predict_batch(&self, triplets: &[Triplet]) -> Result<Vec<TripletPrediction>> {
        let mut out = Vec::with_capacity(triplets.len());
        for chunk in triplets.chunks(EVAL_BATCH) {
            let batch = TripletBatch::from_triplets(chunk)?;
            let (o, _) = self.forward_batch(batch, &mut Mode::Eval, true)?;
            let sim = o.similarity.expect("similarity requested");
            for r in 0..chunk.len() {
                out.push(TripletPrediction {
                    image: to_va(o.va[0].row(r))?,
                    music: to_va(o.va[1].row(r))?,
                    caption: to_va(o.va[2].row(r))?,
                    similarity: sim.get(r, 0),
                });
            }
        }
        Ok(out)
    }
}

/// Predicts every label exactly. Useful as a zero-error baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthPredictor;

impl TripletPredictor for GroundTruthPredictor {
    fn predict_batch(&self, triplets: &[Triplet]) -> Result<Vec<TripletPrediction>> {
        Ok(triplets
            .iter()
            .map(|t| TripletPrediction { image: t.image.va, music: t.music.va, caption: t.caption.va, similarity: t.target_score })
            .collect())
    }
}

#[derive(Default)]
struct Acc {
    sq: f64,
    abs: f64,
}

impl Acc {
    fn push(&mut self, e: f64) {
        self.sq += e * e;
        self.abs += e.abs();
    }

    fn finish(&self, n: f64) -> ErrorMetrics {
        ErrorMetrics { mse: self.sq / n, mae: self.abs / n }
    }
}

fn va_metrics(v: &Acc, a: &Acc, n: f64) -> VaMetrics {
    let v = v.finish(n);
    let a = a.finish(n);
    VaMetrics { v_mse: v.mse, v_mae: v.mae, a_mse: a.mse, a_mae: a.mae }
}

/// Per-dimension VA errors for each modality and similarity errors.
pub fn evaluate(model: &impl TripletPredictor, triplets: &[Triplet]) -> Result<EvalReport> {
    if triplets.is_empty() {
        return Err(Error::EmptySet("evaluation triplets"));
    }
    let preds = model.predict_batch(triplets)?;
    report_from_predictions(&preds, triplets)
}

pub fn report_from_predictions(preds: &[TripletPrediction], triplets: &[Triplet]) -> Result<EvalReport> {
    if triplets.is_empty() {
        return Err(Error::EmptySet("evaluation triplets"));
    }
    if preds.len() != triplets.len() {
        return Err(Error::shape("prediction count differs from triplet count"));
    }
    let mut acc: [Acc; 7] = Default::default();
    for (p, t) in preds.iter().zip(triplets) {
        let pairs: [(&VaVector, &VaVector); 3] = [(&p.image, &t.image.va), (&p.music, &t.music.va), (&p.caption, &t.caption.va)];
        for (k, (pred, target)) in pairs.into_iter().enumerate() {
            acc[2 * k].push(pred.valence() - target.valence());
            acc[2 * k + 1].push(pred.arousal() - target.arousal());
        }
        acc[6].push(p.similarity - t.target_score);
    }
    let n = triplets.len() as f64;
    Ok(EvalReport {
        image: va_metrics(&acc[0], &acc[1], n),
        music: va_metrics(&acc[2], &acc[3], n),
        caption: va_metrics(&acc[4], &acc[5], n),
        similarity: acc[6].finish(n),
        count: triplets.len(),
    })
}
