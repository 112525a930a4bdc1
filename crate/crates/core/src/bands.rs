//! The 17-channel satellite catalog, spectral indices and band selections.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Catalog channel names in storage order.
pub const CATALOG: [&str; 17] = [
    "NDVI", "NDWI", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B11", "B12", "B02E", "B03E", "B04E",
    "SCL", "CLD",
];

pub const NDVI: usize = 0;
pub const NDWI: usize = 1;
pub const B02: usize = 2;
pub const B03: usize = 3;
pub const B04: usize = 4;
pub const B08: usize = 8;
pub const SCL: usize = 15;
pub const CLD: usize = 16;

/// Highest scene-classification code.
pub const SCL_MAX: f64 = 11.0;

/// How a catalog channel is brought to a unit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    /// Normalized difference in `[-1, 1]`.
    Index,
    /// Surface reflectance in `[0, 1]`.
    Reflectance,
    /// Categorical code, scaled by `1 / 11`.
    SceneClass,
    /// Percentage, scaled by `1 / 100`.
    CloudProbability,
}

pub fn band_kind(catalog_index: usize) -> BandKind {
    match catalog_index {
        NDVI | NDWI => BandKind::Index,
        SCL => BandKind::SceneClass,
        CLD => BandKind::CloudProbability,
        _ => BandKind::Reflectance,
    }
}

/// `(a - b) / (a + b)`, 0 where the denominator vanishes.
pub fn normalized_difference(a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(config_err!("band lengths differ: {} vs {}", a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            let den = x + y;
            if den == 0.0 {
                0.0
            } else {
                ((x - y) / den) as f32
            }
        })
        .collect())
}

/// `(B08 - B04) / (B08 + B04)`.
pub fn ndvi(b08: &[f32], b04: &[f32]) -> Result<Vec<f32>> {
    normalized_difference(b08, b04)
}

/// `(B03 - B08) / (B03 + B08)`.
pub fn ndwi(b03: &[f32], b08: &[f32]) -> Result<Vec<f32>> {
    normalized_difference(b03, b08)
}

/// Named satellite band subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandSelection {
    /// RGB + NIR.
    #[serde(rename = "4B")]
    B4,
    /// Indices, enhanced colour, NIR and scene class.
    #[serde(rename = "7B")]
    B7,
    /// Raw reflectance bands only.
    #[serde(rename = "10B")]
    B10,
}

impl BandSelection {
    pub const ALL: [BandSelection; 3] = [BandSelection::B4, BandSelection::B7, BandSelection::B10];

    pub fn indices(self) -> &'static [usize] {
        match self {
            BandSelection::B4 => &[2, 3, 4, 8],
            BandSelection::B7 => &[0, 1, 12, 13, 14, 8, 15],
            BandSelection::B10 => &[2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        }
    }

    pub fn channels(self) -> usize {
        self.indices().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            BandSelection::B4 => "4B",
            BandSelection::B7 => "7B",
            BandSelection::B10 => "10B",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err!("unknown band selection {s:?}; expected 4B, 7B or 10B"))
    }
}
