//! Training clips built by concatenating consecutive annotated base clips
//! of one track.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VaVector;

pub const DEFAULT_MAX_CONCAT: usize = 5;

/// One annotated base clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseClip {
    pub id: String,
    pub va: VaVector,
}

/// A run of consecutive base clips labelled with their mean VA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub base_clip_ids: Vec<String>,
    pub va: VaVector,
}

/// Every run of 1..=`max_concat` consecutive clips, ordered by start and
/// then by length. A track of `n` clips yields `sum(n - L + 1)` specs.
pub fn build_clip_specs(track: &[BaseClip], max_concat: usize) -> Result<Vec<ClipSpec>> {
    if max_concat == 0 {
        return Err(Error::OutOfRange { what: "max_concat", value: 0.0 });
    }
    let mut out = Vec::new();
    for start in 0..track.len() {
        let (mut v, mut a) = (0.0, 0.0);
        for len in 1..=max_concat.min(track.len() - start) {
            let c = &track[start + len - 1];
            v += c.va.valence();
            a += c.va.arousal();
            let n = len as f64;
            out.push(ClipSpec {
                base_clip_ids: track[start..start + len].iter().map(|c| c.id.clone()).collect(),
                va: VaVector::new((v / n).clamp(0.0, 1.0), (a / n).clamp(0.0, 1.0))?,
            });
        }
    }
    Ok(out)
}
