//! Dataset assembly, manifests and on-disk layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{base_shape, deform_with_grid, dim_of, Noise, SynthesisMeta, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::geometry::{io, PointSet, ShapePair};
use crate::rng::{mix, RNG_ALGORITHM};
use crate::util::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_test_start() -> u64 {
    1 << 32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub base_shape: String,
    pub n_points: usize,
    pub deformation_level: f64,
    #[serde(default = "none_noise")]
    pub noise: Noise,
    pub global_seed: u64,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// First pair index of the training split; pair `i` draws from `mix(global_seed, i)`.
    #[serde(default)]
    pub train_index_start: u64,
    #[serde(default = "default_test_start")]
    pub test_index_start: u64,
    #[serde(default = "default_grid")]
    pub control_grid: usize,
}

fn none_noise() -> Noise {
    Noise::NONE
}

impl DatasetConfig {
    /// Desk-scale defaults for a shape at one deformation level.
    pub fn new(base_shape: &str, deformation_level: f64) -> Self {
        Self {
            base_shape: base_shape.to_string(),
            n_points: 128,
            deformation_level,
            noise: Noise::NONE,
            global_seed: 0,
            train_pairs: 2000,
            test_pairs: 200,
            train_index_start: 0,
            test_index_start: default_test_start(),
            control_grid: DEFAULT_GRID,
        }
    }

    pub fn dim(&self) -> Result<usize> {
        dim_of(&self.base_shape)
    }

    pub fn validate(&self) -> Result<()> {
        self.dim()?;
        self.noise.validate()?;
        if self.train_pairs == 0 && self.test_pairs == 0 {
            return Err(Error::Config("a dataset needs at least one pair".into()));
        }
        if !(self.deformation_level >= 0.0) {
            return Err(Error::Config(format!("negative deformation level {}", self.deformation_level)));
        }
        if self.control_grid < 2 {
            return Err(Error::Config("control grid needs at least 2 points per axis".into()));
        }
        let train = self.train_index_start..self.train_index_start.saturating_add(self.train_pairs as u64);
        let test = self.test_index_start..self.test_index_start.saturating_add(self.test_pairs as u64);
        if train.start < test.end && test.start < train.end {
            return Err(Error::Config("train and test seed ranges overlap".into()));
        }
        Ok(())
    }
}

/// Pairs of one split with their stable identifiers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub ids: Vec<String>,
    pub pairs: Vec<ShapePair>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ShapePair)> {
        self.ids.iter().map(String::as_str).zip(&self.pairs)
    }

    /// First `n` pairs (or all of them).
    pub fn truncated(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split { ids: self.ids[..n].to_vec(), pairs: self.pairs[..n].to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Split,
    pub test: Split,
}

/// Per-pair seeds: `(pair, source deformation, target deformation, noise)`.
fn pair_seeds(global_seed: u64, index: u64) -> (u64, u64, u64, u64) {
    let pair = mix(global_seed, index);
    (pair, mix(pair, 0), mix(pair, 1), mix(pair, 2))
}

/// Pair `index`: two independent deformations of `base`, noise applied to the target.
pub fn generate_pair(cfg: &DatasetConfig, base: &PointSet, index: u64) -> Result<ShapePair> {
    let (pair_seed, src_seed, tgt_seed, noise_seed) = pair_seeds(cfg.global_seed, index);
    let level = cfg.deformation_level;
    let source = deform_with_grid(base, level, src_seed, cfg.control_grid)?;
    let clean = deform_with_grid(base, level, tgt_seed, cfg.control_grid)?;
    let target = cfg.noise.apply(&clean, noise_seed)?;
    let mut pair = ShapePair::new(source, target)?;
    if cfg.noise.kind != super::NoiseKind::None {
        pair.clean_target = Some(clean);
    }
    pair.meta = Some(SynthesisMeta {
        base_shape: cfg.base_shape.clone(),
        deformation_level: level,
        noise: cfg.noise,
        seed: pair_seed,
    });
    Ok(pair)
}

fn pair_id(split: &str, index: u64) -> String {
    format!("{split}-{index:010}")
}

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let base = base_shape(&cfg.base_shape, cfg.n_points, cfg.global_seed)?;
    let make = |name: &str, start: u64, count: usize| -> Result<Split> {
        let mut split = Split::default();
        for index in start..start + count as u64 {
            split.ids.push(pair_id(name, index));
            split.pairs.push(generate_pair(cfg, &base, index)?);
        }
        Ok(split)
    };
    Ok(Dataset {
        config: cfg.clone(),
        train: make("train", cfg.train_index_start, cfg.train_pairs)?,
        test: make("test", cfg.test_index_start, cfg.test_pairs)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub global_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub index: u64,
    pub pair_seed: u64,
    pub source_seed: u64,
    pub target_seed: u64,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_target: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<PairRecord>,
    pub test: Vec<PairRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub base_shape: String,
    pub n_points: usize,
    pub deformation_level: f64,
    pub noise: Noise,
    pub control_grid: usize,
    pub rng: RngInfo,
    pub splits: Splits,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Writes every pair as point-set files plus `manifest.json` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    let cfg = &ds.config;
    let records = |name: &str, split: &Split, start: u64| -> Result<Vec<PairRecord>> {
        std::fs::create_dir_all(dir.join(name))?;
        let mut out = Vec::with_capacity(split.len());
        for (k, (id, pair)) in split.iter().enumerate() {
            let index = start + k as u64;
            let (pair_seed, source_seed, target_seed, _) = pair_seeds(cfg.global_seed, index);
            let src = format!("{name}/{id}_src.pts");
            let tgt = format!("{name}/{id}_tgt.pts");
            write_atomic(&dir.join(&src), io::to_text(&pair.source).as_bytes())?;
            write_atomic(&dir.join(&tgt), io::to_text(&pair.target).as_bytes())?;
            let clean_target = match &pair.clean_target {
                Some(c) => {
                    let path = format!("{name}/{id}_clean.pts");
                    write_atomic(&dir.join(&path), io::to_text(c).as_bytes())?;
                    Some(path)
                }
                None => None,
            };
            out.push(PairRecord {
                id: id.to_string(),
                index,
                pair_seed,
                source_seed,
                target_seed,
                source: src,
                target: tgt,
                clean_target,
            });
        }
        Ok(out)
    };
    let train = records("train", &ds.train, cfg.train_index_start)?;
    let test = records("test", &ds.test, cfg.test_index_start)?;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        dim: cfg.dim()?,
        base_shape: cfg.base_shape.clone(),
        n_points: cfg.n_points,
        deformation_level: cfg.deformation_level,
        noise: cfg.noise,
        control_grid: cfg.control_grid,
        rng: RngInfo { algorithm: RNG_ALGORITHM.to_string(), global_seed: cfg.global_seed },
        splits: Splits { train, test },
    };
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

fn load_split(dir: &Path, manifest: &Manifest, records: &[PairRecord]) -> Result<Split> {
    let mut split = Split::default();
    for rec in records {
        let source = io::read(&dir.join(&rec.source))?;
        let target = io::read(&dir.join(&rec.target))?;
        if source.dim() != manifest.dim {
            return Err(Error::DimMismatch(source.dim(), manifest.dim));
        }
        let mut pair = ShapePair::new(source, target)?;
        if let Some(c) = &rec.clean_target {
            pair.clean_target = Some(io::read(&dir.join(c))?);
        }
        pair.meta = Some(SynthesisMeta {
            base_shape: manifest.base_shape.clone(),
            deformation_level: manifest.deformation_level,
            noise: manifest.noise,
            seed: rec.pair_seed,
        });
        split.ids.push(rec.id.clone());
        split.pairs.push(pair);
    }
    Ok(split)
}

/// Loads a dataset written by [`write_dataset`] (or described by any
/// manifest whose paths are relative to `dir`).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Io(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let m = Manifest::from_json(&text)?;
    let start = |recs: &[PairRecord], default: u64| recs.first().map_or(default, |r| r.index);
    let config = DatasetConfig {
        base_shape: m.base_shape.clone(),
        n_points: m.n_points,
        deformation_level: m.deformation_level,
        noise: m.noise,
        global_seed: m.rng.global_seed,
        train_pairs: m.splits.train.len(),
        test_pairs: m.splits.test.len(),
        train_index_start: start(&m.splits.train, 0),
        test_index_start: start(&m.splits.test, default_test_start()),
        control_grid: m.control_grid,
    };
    Ok(Dataset { train: load_split(dir, &m, &m.splits.train)?, test: load_split(dir, &m, &m.splits.test)?, config })
}

/// Builds a manifest for a directory of `<id>_src.pts` / `<id>_tgt.pts`
/// files. Every pair lands in the test split; seeds are zero.
pub fn manifest_from_dir(dir: &Path) -> Result<Manifest> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_src.pts")).map(str::to_string))
        .collect();
    ids.sort();
    let mut dim = None;
    let mut n_points = 0;
    let mut test = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        let tgt = format!("{id}_tgt.pts");
        if !dir.join(&tgt).exists() {
            continue;
        }
        let src = io::read(&dir.join(format!("{id}_src.pts")))?;
        match dim {
            None => dim = Some(src.dim()),
            Some(d) if d != src.dim() => return Err(Error::DimMismatch(d, src.dim())),
            _ => {}
        }
        n_points = n_points.max(src.len());
        test.push(PairRecord {
            id: id.clone(),
            index: k as u64,
            pair_seed: 0,
            source_seed: 0,
            target_seed: 0,
            source: format!("{id}_src.pts"),
            target: tgt,
            clean_target: None,
        });
    }
    let dim = dim.ok_or_else(|| Error::Io(format!("no *_src.pts/*_tgt.pts pairs in {}", dir.display())))?;
    Ok(Manifest {
        format_version: MANIFEST_VERSION,
        dim,
        base_shape: "external".into(),
        n_points,
        deformation_level: 0.0,
        noise: Noise::NONE,
        control_grid: DEFAULT_GRID,
        rng: RngInfo { algorithm: RNG_ALGORITHM.to_string(), global_seed: 0 },
        splits: Splits { train: Vec::new(), test },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::NoiseKind;

    fn small(level: f64) -> DatasetConfig {
        DatasetConfig { train_pairs: 6, test_pairs: 3, n_points: 32, ..DatasetConfig::new("fish", level) }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = build_dataset(&small(0.5)).unwrap();
        let b = build_dataset(&small(0.5)).unwrap();
        assert_eq!(a, b);
        let base = base_shape("fish", 32, 0).unwrap();
        assert_eq!(generate_pair(&a.config, &base, 2).unwrap(), a.train.pairs[2]);
    }

    #[test]
    fn source_and_target_are_distinct_deformations() {
        let ds = build_dataset(&small(0.5)).unwrap();
        for p in &ds.train.pairs {
            assert_ne!(p.source, p.target);
            assert_eq!(p.source.len(), 32);
        }
    }

    #[test]
    fn overlapping_seed_ranges_rejected() {
        let cfg = DatasetConfig { test_index_start: 3, ..small(0.5) };
        assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
        let cfg = DatasetConfig { train_pairs: 0, test_pairs: 0, ..small(0.5) };
        assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
        let test_only = DatasetConfig { train_pairs: 0, ..small(0.5) };
        assert!(build_dataset(&test_only).unwrap().train.is_empty());
    }

    #[test]
    fn noise_keeps_clean_target() {
        let cfg = DatasetConfig { noise: Noise::new(NoiseKind::Po, 0.1).unwrap(), ..small(0.5) };
        let ds = build_dataset(&cfg).unwrap();
        let p = &ds.test.pairs[0];
        let clean = p.clean_target.as_ref().unwrap();
        assert_eq!(p.target.len(), 32 + super::super::outlier_count(32, 0.1));
        assert_eq!(&p.target.as_flat()[..64], clean.as_flat());
    }

    #[test]
    fn noise_kind_and_level_must_agree() {
        assert!(Noise::new(NoiseKind::None, 0.1).is_err());
        assert!(Noise::new(NoiseKind::Gd, 0.0).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = std::env::temp_dir().join(format!("cpdnet-ds-{}", std::process::id()));
        let cfg = DatasetConfig { noise: Noise::new(NoiseKind::Di, 0.25).unwrap(), ..small(0.3) };
        let ds = build_dataset(&cfg).unwrap();
        let m = write_dataset(&ds, &dir).unwrap();
        assert_eq!(m.splits.train.len(), 6);
        let back = load_dataset(&dir).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.config, ds.config);
        std::fs::remove_dir_all(&dir).ok();
    }
}
