use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VaVector;

/// Source rating scale of a VA annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaScale {
    /// 1..=9 self-assessment ratings.
    NinePoint,
    /// Continuous 1..=10 ratings.
    TenPoint,
    /// -1..=+1 dynamic annotations.
    PmOne,
    /// Already in [0, 1].
    Unit,
}

impl VaScale {
    pub fn range(self) -> (f64, f64) {
        match self {
            VaScale::NinePoint => (1.0, 9.0),
            VaScale::TenPoint => (1.0, 10.0),
            VaScale::PmOne => (-1.0, 1.0),
            VaScale::Unit => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VaScale::NinePoint => "nine_point",
            VaScale::TenPoint => "ten_point",
            VaScale::PmOne => "pm_one",
            VaScale::Unit => "unit",
        }
    }

    fn to_unit(self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&x) {
            return Err(Error::OutOfScaleRange { scale: self.name(), value: x });
        }
        Ok(match self {
            VaScale::NinePoint => (x - 1.0) / 8.0,
            VaScale::TenPoint => (x - 1.0) / 9.0,
            VaScale::PmOne => (x + 1.0) / 2.0,
            VaScale::Unit => x,
        })
    }
}

/// Maps a raw (valence, arousal) rating onto the unit square.
pub fn normalize_va(raw: (f64, f64), scale: VaScale) -> Result<VaVector> {
    VaVector::new(scale.to_unit(raw.0)?, scale.to_unit(raw.1)?)
}
