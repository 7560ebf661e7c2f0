//! Experiment specification files (TOML).

use std::path::{Path, PathBuf};

use cpdnet_core::cpd::CpdConfig;
use cpdnet_core::model::Activation;
use cpdnet_core::synth::{dim_of, DatasetConfig, Noise, NoiseKind, DEFAULT_GRID};
use cpdnet_core::train::TrainConfig;
use cpdnet_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// A noise protocol evaluated at several strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweep {
    pub kind: NoiseKind,
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub shape: String,
    /// Optional; must agree with the shape when given.
    pub dim: Option<usize>,
    pub n_points: usize,
    /// Deformation level of the training data and of the noise sweeps.
    pub train_level: f64,
    /// Noise applied to training targets.
    pub train_noise: Noise,
    /// Noise-free evaluation levels.
    pub levels: Vec<f64>,
    /// Noisy evaluation cells at `train_level`.
    pub noise: Vec<NoiseSweep>,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// Drives data synthesis, weight initialization and batch shuffling.
    pub seed: u64,
    pub control_grid: usize,
    pub activation: Activation,
    pub smoothness_k: usize,
    pub train: TrainConfig,
    pub cpd: CpdConfig,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            shape: "fish".into(),
            dim: None,
            n_points: 128,
            train_level: 0.5,
            train_noise: Noise::NONE,
            levels: vec![0.3, 0.5, 0.7, 1.2],
            noise: Vec::new(),
            train_pairs: 2000,
            test_pairs: 200,
            seed: 0,
            control_grid: DEFAULT_GRID,
            activation: Activation::Relu,
            smoothness_k: cpdnet_core::report::DEFAULT_SMOOTHNESS_K,
            train: TrainConfig::default(),
            cpd: CpdConfig::default(),
            out: PathBuf::from("runs/default"),
        }
    }
}

/// One evaluation cell: a test-only dataset at a level and noise setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub name: String,
    pub level: f64,
    pub noise: Noise,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(format!("spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Config("spec is not UTF-8".into()))?;
        Ok((Self::from_toml(&text)?, bytes))
    }

    pub fn dim(&self) -> Result<usize> {
        dim_of(&self.shape)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim()?;
        if let Some(d) = self.dim {
            if d != dim {
                return Err(Error::Config(format!("shape `{}` is {dim}-D but dim = {d}", self.shape)));
            }
        }
        let levels = self.levels.iter().chain(std::iter::once(&self.train_level));
        if let Some(l) = levels.clone().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("deformation level {l} must be non-negative")));
        }
        self.train_noise.validate()?;
        for sweep in &self.noise {
            for &l in &sweep.levels {
                Noise::new(sweep.kind, l)?;
            }
        }
        if self.test_pairs == 0 {
            return Err(Error::Config("test_pairs must be at least 1".into()));
        }
        if self.smoothness_k == 0 {
            return Err(Error::Config("smoothness_k must be at least 1".into()));
        }
        self.train_config().validate()?;
        self.cpd.validate()
    }

    /// Training settings with the spec's seed and checkpoint directory filled in.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = self.seed;
        if cfg.checkpoint_dir.is_none() {
            cfg.checkpoint_dir = Some(self.out.join("checkpoints"));
        }
        cfg
    }

    pub fn dataset_config(&self, level: f64, noise: Noise, train_pairs: usize) -> DatasetConfig {
        let mut cfg = DatasetConfig::new(&self.shape, level);
        cfg.n_points = self.n_points;
        cfg.noise = noise;
        cfg.global_seed = self.seed;
        cfg.train_pairs = train_pairs;
        cfg.test_pairs = self.test_pairs;
        cfg.control_grid = self.control_grid;
        cfg
    }

    /// Noise-free level cells first, then every noise sweep entry.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> =
            self.levels.iter().map(|&l| Cell { name: format!("level_{l:?}"), level: l, noise: Noise::NONE }).collect();
        for sweep in &self.noise {
            for &nl in &sweep.levels {
                cells.push(Cell {
                    name: format!("{}_{nl:?}", sweep.kind.as_str()),
                    level: self.train_level,
                    noise: Noise { kind: sweep.kind, level: nl },
                });
            }
        }
        cells
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("data").join("train")
    }

    pub fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.out.join("data").join("cells").join(&cell.name)
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.cpdn")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }
}

/// Parses `kind:level[,kind:level...]` into sweeps, merging repeated kinds.
pub fn parse_noise_list(text: &str) -> Result<Vec<NoiseSweep>> {
    let mut sweeps: Vec<NoiseSweep> = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (kind, level) =
            item.split_once(':').ok_or_else(|| Error::Config(format!("noise `{item}` is not kind:level")))?;
        let kind: NoiseKind = kind.parse()?;
        let level: f64 = level.parse().map_err(|_| Error::Config(format!("bad noise level in `{item}`")))?;
        Noise::new(kind, level)?;
        match sweeps.iter_mut().find(|s| s.kind == kind) {
            Some(s) => s.levels.push(level),
            None => sweeps.push(NoiseSweep { kind, levels: vec![level] }),
        }
    }
    Ok(sweeps)
}

pub fn parse_level_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("bad level `{s}`"))))
        .collect()
}
