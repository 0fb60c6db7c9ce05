//! Shared domain types: VA coordinates, modality tags, feature records and
//! training triplets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of an image class-token feature vector.
pub const IMAGE_FEATURE_DIM: usize = 512;
/// Number of stacked transformer-layer class tokens for music and captions.
pub const STACK_LAYERS: usize = 13;
/// Width of each stacked class token.
pub const STACK_DIM: usize = 768;

/// A (valence, arousal) coordinate in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct VaVector {
    valence: f64,
    arousal: f64,
}

impl VaVector {
    pub fn new(valence: f64, arousal: f64) -> Result<Self> {
        check_unit("valence", valence)?;
        check_unit("arousal", arousal)?;
        Ok(Self { valence, arousal })
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.valence, self.arousal]
    }
}

fn check_unit(field: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidRange { field, value })
    }
}

impl TryFrom<[f64; 2]> for VaVector {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        VaVector::new(v[0], v[1])
    }
}

impl From<VaVector> for [f64; 2] {
    fn from(v: VaVector) -> Self {
        v.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Music,
    Caption,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Music, Modality::Caption];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Music => "music",
            Modality::Caption => "caption",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Backbone features of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// A single class-token vector (images).
    Flat(Vec<f64>),
    /// `layers` class tokens of width `dim`, stored layer-major.
    Stacked { layers: usize, dim: usize, data: Vec<f64> },
}

impl Features {
    pub fn values(&self) -> &[f64] {
        match self {
            Features::Flat(v) => v,
            Features::Stacked { data, .. } => data,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Features::Flat(v) => vec![v.len()],
            Features::Stacked { layers, dim, .. } => vec![*layers, *dim],
        }
    }
}

/// Expected feature widths. The defaults are the backbone sizes; tests may
/// shrink them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub image_dim: usize,
    pub layers: usize,
    pub token_dim: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self { image_dim: IMAGE_FEATURE_DIM, layers: STACK_LAYERS, token_dim: STACK_DIM }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub modality: Modality,
    pub features: Features,
    pub va: VaVector,
    /// Links a music clip to its caption.
    pub pair_id: Option<String>,
}

/// Checks a record against the default backbone dimensions.
pub fn validate_record(r: &FeatureRecord) -> Result<()> {
    validate_record_with(r, &FeatureDims::default())
}

pub fn validate_record_with(r: &FeatureRecord, dims: &FeatureDims) -> Result<()> {
    // VaVector can only be built in range, but the fields are also reachable
    // through deserialization paths that bypass `new`.
    check_unit("valence", r.va.valence)?;
    check_unit("arousal", r.va.arousal)?;
    match (&r.modality, &r.features) {
        (Modality::Image, Features::Flat(v)) if v.len() == dims.image_dim => {}
        (Modality::Music | Modality::Caption, Features::Stacked { layers, dim, data })
            if *layers == dims.layers && *dim == dims.token_dim && data.len() == layers * dim => {}
        (m, f) => {
            return Err(Error::shape(format!(
                "record `{}`: {m} features have shape {:?}",
                r.id,
                f.shape()
            )))
        }
    }
    if r.features.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("features of `{}`", r.id)));
    }
    Ok(())
}

/// One (image, music, caption) training instance with its matching target.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub image: FeatureRecord,
    pub music: FeatureRecord,
    pub caption: FeatureRecord,
    pub target_score: f64,
}

impl Triplet {
    pub fn validate(&self, dims: &FeatureDims) -> Result<()> {
        validate_record_with(&self.image, dims)?;
        validate_record_with(&self.music, dims)?;
        validate_record_with(&self.caption, dims)?;
        if self.image.modality != Modality::Image
            || self.music.modality != Modality::Music
            || self.caption.modality != Modality::Caption
        {
            return Err(Error::Validation {
                id: self.image.id.clone(),
                reason: "triplet slots hold the wrong modalities".into(),
            });
        }
        check_music_caption(&self.music, &self.caption)?;
        if !(self.target_score > 0.0 && self.target_score <= 1.0) {
            return Err(Error::OutOfRange { what: "target_score", value: self.target_score });
        }
        Ok(())
    }
}

/// A music clip and its caption must share a pair id and a VA label.
pub fn check_music_caption(music: &FeatureRecord, caption: &FeatureRecord) -> Result<()> {
    if music.pair_id.is_none() || music.pair_id != caption.pair_id {
        return Err(Error::Validation {
            id: music.id.clone(),
            reason: format!(
                "pair id {:?} does not match caption `{}` ({:?})",
                music.pair_id, caption.id, caption.pair_id
            ),
        });
    }
    if music.va != caption.va {
        return Err(Error::Validation {
            id: music.id.clone(),
            reason: format!("caption `{}` carries a different VA label", caption.id),
        });
    }
    Ok(())
}
