//! Synthetic training and test pairs: base shapes, TPS deformation, noise.

mod dataset;
mod noise;
mod shapes;
mod tps;

pub use dataset::{
    build_dataset, generate_pair, load_dataset, manifest_from_dir, write_dataset, Dataset, DatasetConfig, Manifest,
    PairRecord, Split,
};
pub use noise::{add_di_noise, add_gd_noise, add_po_noise, outlier_count};
pub use shapes::{base_shape, dim_of, MIN_POINTS, SHAPE_NAMES};
pub use tps::{control_grid, deform, deform_with_grid, fit_tps, random_warp, TpsWarp, DEFAULT_GRID, RIDGE_3D};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Gd,
    Po,
    Di,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gd => "gd",
            NoiseKind::Po => "po",
            NoiseKind::Di => "di",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "gd" => Ok(NoiseKind::Gd),
            "po" => Ok(NoiseKind::Po),
            "di" => Ok(NoiseKind::Di),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// A noise protocol and its strength.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub kind: NoiseKind,
    pub level: f64,
}

impl Noise {
    pub const NONE: Noise = Noise { kind: NoiseKind::None, level: 0.0 };

    pub fn new(kind: NoiseKind, level: f64) -> Result<Self> {
        let noise = Noise { kind, level };
        noise.validate()?;
        Ok(noise)
    }

    /// A level of zero and the `none` kind go together.
    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0) || !self.level.is_finite() {
            return Err(Error::LevelOutOfRange(self.level));
        }
        if (self.kind == NoiseKind::None) != (self.level == 0.0) {
            return Err(Error::Config(format!("noise kind {} with level {}", self.kind.as_str(), self.level)));
        }
        Ok(())
    }

    pub fn apply(&self, ps: &PointSet, seed: u64) -> Result<PointSet> {
        match self.kind {
            NoiseKind::None => Ok(ps.clone()),
            NoiseKind::Gd => add_gd_noise(ps, self.level, seed),
            NoiseKind::Po => add_po_noise(ps, self.level, seed),
            NoiseKind::Di => add_di_noise(ps, self.level, seed),
        }
    }
}

/// Everything needed to regenerate one pair bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisMeta {
    pub base_shape: String,
    pub deformation_level: f64,
    pub noise: Noise,
    pub seed: u64,
}
