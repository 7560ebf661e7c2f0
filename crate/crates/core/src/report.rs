//! Per-pair registration metrics and their per-cell aggregates.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::ShapePair;
use crate::losses::{chamfer_per_point, smoothness_diagnostic};
use crate::model::DisplacementField;
use crate::synth::{NoiseKind, Split};

pub const REPORT_HEADER: &str = "pair_id,level,noise_kind,noise_level,pre_cd,post_cd,smoothness,ms_per_pair";
pub const DEFAULT_SMOOTHNESS_K: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub pair_id: String,
    pub level: f64,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    /// Chamfer distance per point between source and (clean) target.
    pub pre_cd: f64,
    /// Chamfer distance per point between transformed source and (clean) target.
    pub post_cd: f64,
    pub smoothness: f64,
    pub ms_per_pair: f64,
}

/// Mean and population standard deviation of one column within a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

/// Aggregate over all rows sharing `(level, noise_kind, noise_level)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub level: f64,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    pub count: usize,
    pub pre_cd: Stat,
    pub post_cd: Stat,
    pub smoothness: Stat,
    pub ms_per_pair: Stat,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegistrationReport {
    pub rows: Vec<ReportRow>,
}

impl RegistrationReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn merge(reports: impl IntoIterator<Item = RegistrationReport>) -> RegistrationReport {
        RegistrationReport { rows: reports.into_iter().flat_map(|r| r.rows).collect() }
    }

    /// Cells ordered by `(noise_kind, noise_level, level)`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut groups: BTreeMap<(&str, u64, u64), Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.noise_kind.as_str(), r.noise_level.to_bits(), r.level.to_bits());
            groups.entry(key).or_default().push(r);
        }
        let mut cells: Vec<Cell> = groups
            .into_values()
            .map(|rows| {
                let col = |f: fn(&ReportRow) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                Cell {
                    level: rows[0].level,
                    noise_kind: rows[0].noise_kind,
                    noise_level: rows[0].noise_level,
                    count: rows.len(),
                    pre_cd: col(|r| r.pre_cd),
                    post_cd: col(|r| r.post_cd),
                    smoothness: col(|r| r.smoothness),
                    ms_per_pair: col(|r| r.ms_per_pair),
                }
            })
            .collect();
        cells.sort_by(|a, b| {
            (a.noise_kind.as_str(), a.noise_level, a.level)
                .partial_cmp(&(b.noise_kind.as_str(), b.noise_level, b.level))
                .unwrap()
        });
        cells
    }

    pub fn mean_pre(&self) -> f64 {
        Stat::of(&self.rows.iter().map(|r| r.pre_cd).collect::<Vec<_>>()).mean
    }

    pub fn mean_post(&self) -> f64 {
        Stat::of(&self.rows.iter().map(|r| r.post_cd).collect::<Vec<_>>()).mean
    }

    pub fn total_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.ms_per_pair).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{},{:?},{:?},{:?},{:?},{:?}\n",
                r.pair_id,
                r.level,
                r.noise_kind.as_str(),
                r.noise_level,
                r.pre_cd,
                r.post_cd,
                r.smoothness,
                r.ms_per_pair
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RegistrationReport> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => return Err(Error::Format(format!("unexpected report header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("report row {}: expected 8 fields, got {}", i + 1, f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Format(format!("report row {}: bad number {s:?}", i + 1)))
            };
            rows.push(ReportRow {
                pair_id: f[0].to_string(),
                level: num(f[1])?,
                noise_kind: f[2].parse()?,
                noise_level: num(f[3])?,
                pre_cd: num(f[4])?,
                post_cd: num(f[5])?,
                smoothness: num(f[6])?,
                ms_per_pair: num(f[7])?,
            });
        }
        Ok(RegistrationReport { rows })
    }

    /// Per-cell summary table.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "level,noise_kind,noise_level,count,pre_mean,pre_std,post_mean,post_std,smoothness_mean,ms_mean\n",
        );
        for c in self.cells() {
            out.push_str(&format!(
                "{:?},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                c.level,
                c.noise_kind.as_str(),
                c.noise_level,
                c.count,
                c.pre_cd.mean,
                c.pre_cd.std,
                c.post_cd.mean,
                c.post_cd.std,
                c.smoothness.mean,
                c.ms_per_pair.mean
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Worker threads; never changes the results, only wall time.
    pub threads: usize,
    pub smoothness_k: usize,
    /// When false, `ms_per_pair` is written as 0 so reports are byte-stable.
    pub record_timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threads: 1, smoothness_k: DEFAULT_SMOOTHNESS_K, record_timing: true }
    }
}

/// Scores one registration of `pair` against its clean target when present.
pub fn score_pair(id: &str, pair: &ShapePair, field: &DisplacementField, ms: f64, k: usize) -> Result<ReportRow> {
    let reference = pair.reference_target();
    let k = k.min(pair.source.len().saturating_sub(1)).max(1);
    let smoothness = if pair.source.len() > 1 { smoothness_diagnostic(field, &pair.source, k)? } else { 0.0 };
    let (level, noise_kind, noise_level) = match &pair.meta {
        Some(m) => (m.deformation_level, m.noise.kind, m.noise.level),
        None => (0.0, NoiseKind::None, 0.0),
    };
    Ok(ReportRow {
        pair_id: id.to_string(),
        level,
        noise_kind,
        noise_level,
        pre_cd: chamfer_per_point(&pair.source, reference)?,
        post_cd: chamfer_per_point(&field.transformed, reference)?,
        smoothness,
        ms_per_pair: ms,
    })
}

/// Runs `register` on every pair of `split` and scores the result. Rows keep
/// split order regardless of the thread count.
pub fn evaluate_with<F>(split: &Split, opts: &EvalOptions, register: F) -> Result<RegistrationReport>
where
    F: Fn(&ShapePair) -> Result<DisplacementField> + Sync,
{
    if split.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let one = |i: usize| -> Result<ReportRow> {
        let pair = &split.pairs[i];
        let start = Instant::now();
        let field = register(pair)?;
        let ms = if opts.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        score_pair(&split.ids[i], pair, &field, ms, opts.smoothness_k)
    };
    let threads = opts.threads.clamp(1, split.len());
    let rows: Vec<Result<ReportRow>> = if threads == 1 {
        (0..split.len()).map(one).collect()
    } else {
        let mut slots: Vec<Option<Result<ReportRow>>> = (0..split.len()).map(|_| None).collect();
        let chunk = split.len().div_ceil(threads);
        std::thread::scope(|s| {
            for (c, out) in slots.chunks_mut(chunk).enumerate() {
                let one = &one;
                s.spawn(move || {
                    for (j, slot) in out.iter_mut().enumerate() {
                        *slot = Some(one(c * chunk + j));
                    }
                });
            }
        });
        slots.into_iter().map(|r| r.expect("every slot filled")).collect()
    };
    Ok(RegistrationReport { rows: rows.into_iter().collect::<Result<_>>()? })
}
