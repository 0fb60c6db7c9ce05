use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VaVector;

/// Mean over the batch of the squared distance between predicted and
/// target VA.
pub fn loss_va(preds: &[VaVector], targets: &[VaVector]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} VA predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let dv = p.valence() - t.valence();
            let da = p.arousal() - t.arousal();
            dv * dv + da * da
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Mean squared error between predicted and target matching scores.
pub fn loss_sim(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!("{} score predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// The loss terms of one batch. `similarity` is absent when the similarity
/// predictor is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub va_image: f64,
    pub va_music: f64,
    pub va_caption: f64,
    pub similarity: Option<f64>,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        total_loss(self)
    }
}

/// Unweighted sum of the three VA losses and, when present, the similarity
/// loss.
pub fn total_loss(parts: &LossParts) -> f64 {
    parts.va_image + parts.va_music + parts.va_caption + parts.similarity.unwrap_or(0.0)
}
