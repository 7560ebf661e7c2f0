//! Unsupervised training: minimize the expected alignment loss over pairs
//! of point sets. Only the source and (possibly corrupted) target sets are
//! read; synthesis metadata and clean targets never reach the loss.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::gradcheck::GradReport;
use crate::autodiff::{adam_step, AdamState, Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointSet, ShapePair};
use crate::losses::LossKind;
use crate::matrix::Matrix;
use crate::model::{checkpoint, BatchForward, NetworkParams};
use crate::report::{evaluate_with, EvalOptions, RegistrationReport};
use crate::rng::{mix, Stream};
use crate::scalar::Scalar;
use crate::synth::{Dataset, Split};

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub loss: LossKind,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Test pairs scored for the per-epoch validation loss; 0 disables it.
    pub val_pairs: usize,
    /// When false, the `seconds` column is written as 0 so logs are byte-stable.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            base_lr: 1e-4,
            lr_decay: 0.995,
            epochs: 30,
            loss: LossKind::Chamfer,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            val_pairs: 32,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs a checkpoint_dir".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// Zero-based; the epoch ran at `lr = base_lr * lr_decay^epoch`.
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when validation is disabled.
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<TrainLog> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(TRAIN_LOG_HEADER) {
            return Err(Error::Format("unexpected train log header".into()));
        }
        let mut records = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("train log row `{line}`")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
            records.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| Error::Format(format!("bad epoch `{}`", f[0])))?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                lr: num(f[3])?,
                seconds: num(f[4])?,
            });
        }
        Ok(TrainLog { records })
    }
}

/// Mean over pairs of the alignment loss between each pair's transformed
/// source rows and its target.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    fwd: &BatchForward<T>,
    targets: &[&PointSet],
    kind: LossKind,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut offset = 0;
    for (&n, target) in fwd.source_counts.iter().zip(targets) {
        let moved = g.slice_rows(fwd.transformed, offset, n)?;
        offset += n;
        let data = target.as_flat().iter().map(|&v| T::from_f64_lossy(v)).collect();
        let tgt = g.constant(Matrix::from_vec(target.len(), target.dim(), data)?);
        let l = g.chamfer(moved, tgt, kind)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or(Error::BatchTooSmall(0))?;
    Ok(g.scale(total, T::from_f64_lossy(1.0 / targets.len() as f64)))
}

/// One optimizer step on a batch; returns the batch loss before the step.
pub fn train_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    adam: &mut AdamState<T>,
    pairs: &[&ShapePair],
    kind: LossKind,
) -> Result<f64> {
    let sources: Vec<&PointSet> = pairs.iter().map(|p| &p.source).collect();
    let targets: Vec<&PointSet> = pairs.iter().map(|p| &p.target).collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = params.forward_batch(&mut g, &bound, &sources, &targets, Mode::Train)?;
    let loss = batch_loss(&mut g, &fwd, &targets, kind)?;
    let value = g.value(loss)[(0, 0)].as_f64();
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    params.zero_grad();
    params.accumulate_grads(&g, &bound);
    params.store_stats(fwd.stats);
    adam_step(&mut params.tensors_mut(), adam)?;
    params.zero_grad();
    Ok(value)
}

/// Eval-mode mean loss over `pairs`.
pub fn mean_loss<T: Scalar>(params: &NetworkParams<T>, pairs: &[ShapePair], kind: LossKind) -> Result<f64> {
    let mut sum = 0.0;
    for p in pairs {
        let field = params.register_pair(p)?;
        sum += crate::losses::loss(&field.transformed, &p.target, kind)?.total;
    }
    Ok(sum / pairs.len() as f64)
}

/// Diverged coordinates surface as errors from the geometry layer; fold them
/// into a NaN loss so the caller can abort uniformly.
fn non_finite_as_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::NonFiniteCoordinate(_)) | Err(Error::NonFinite(_)) => Ok(f64::NAN),
        other => other,
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.cpdn"))
}

/// Trains `params` on `dataset.train`; see [`train_with`].
pub fn train<T: Scalar>(
    dataset: &Dataset,
    params: NetworkParams<T>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams<T>, TrainLog)> {
    train_with(&dataset.train, &dataset.test, params, cfg, |_| {})
}

/// Training loop with a per-epoch callback. Each epoch shuffles the training
/// pairs with a stream seeded from `(cfg.seed, epoch)`, takes one Adam step per
/// batch on the mean per-pair loss, then decays the learning rate.
///
/// A non-finite batch loss aborts with [`Error::NonFiniteLoss`]; when a
/// checkpoint directory is configured the parameters from the start of that
/// epoch are saved as `last_good.cpdn` first.
pub fn train_with<T: Scalar>(
    train_split: &Split,
    val_split: &Split,
    mut params: NetworkParams<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NetworkParams<T>, TrainLog)> {
    cfg.validate()?;
    params.validate()?;
    if train_split.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(p) = train_split.pairs.iter().find(|p| p.dim() != params.dim) {
        return Err(Error::DimMismatch(p.dim(), params.dim));
    }
    let val: Vec<ShapePair> = val_split.pairs.iter().take(cfg.val_pairs).cloned().collect();
    let mut adam = AdamState::for_params(&params.tensors_mut(), cfg.base_lr, cfg.lr_decay);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let abort = |last_good: &NetworkParams<T>, epoch: usize| {
        if let Some(dir) = &cfg.checkpoint_dir {
            checkpoint::save(last_good, &dir.join("last_good.cpdn"))?;
        }
        Err(Error::NonFiniteLoss { epoch })
    };

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let snapshot = params.clone();
        let lr = adam.lr();
        Stream::new(mix(cfg.seed, epoch as u64)).shuffle(&mut order);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&ShapePair> = chunk.iter().map(|&i| &train_split.pairs[i]).collect();
            let loss = non_finite_as_nan(train_step(&mut params, &mut adam, &pairs, cfg.loss))?;
            if !loss.is_finite() || !params.all_finite() {
                return abort(&snapshot, epoch);
            }
            sum += loss;
            batches += 1;
        }
        adam.end_epoch();
        let val_loss = if val.is_empty() { f64::NAN } else { non_finite_as_nan(mean_loss(&params, &val, cfg.loss))? };
        if !val.is_empty() && !val_loss.is_finite() {
            return abort(&snapshot, epoch);
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
            lr,
            seconds: if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&record);
        log.records.push(record);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                checkpoint::save(&params, &checkpoint_path(dir, epoch))?;
            }
        }
    }
    Ok((params, log))
}

/// Registers every pair of `split` with `params` and scores it.
pub fn evaluate<T: Scalar>(split: &Split, params: &NetworkParams<T>, opts: &EvalOptions) -> Result<RegistrationReport> {
    if let Some(p) = split.pairs.iter().find(|p| p.dim() != params.dim) {
        return Err(Error::DimMismatch(p.dim(), params.dim));
    }
    evaluate_with(split, opts, |pair| params.register_pair(pair))
}

/// Gradient norms below this are indistinguishable from the rounding noise
/// of central differences and count as zero in [`loss_gradcheck`].
pub const GRADCHECK_NOISE_FLOOR: f64 = 1e-7;

/// Batch loss and the tape's branch signature.
fn batch_loss_value(
    params: &NetworkParams<f64>,
    sources: &[&PointSet],
    targets: &[&PointSet],
    kind: LossKind,
    mode: Mode,
) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = params.forward_batch(&mut g, &bound, sources, targets, mode)?;
    let loss = batch_loss(&mut g, &fwd, targets, kind)?;
    Ok((g.value(loss)[(0, 0)], g.branch_signature()))
}

/// Compares the reverse-mode gradient of the batch loss with central
/// differences of step `h`, for up to `per_tensor` entries of every parameter
/// tensor (chosen with `seed`). Running statistics are left untouched.
///
/// A probe whose `+h` or `-h` evaluation changes a discrete choice on the
/// tape (a kink of max-pool, ReLU or nearest-neighbour selection) is skipped
/// and replaced by the next candidate entry. Tensors whose analytic and
/// numeric gradients both fall below [`GRADCHECK_NOISE_FLOOR`] report zero
/// error: in train mode a bias feeding a batch-norm layer has an identically
/// zero gradient.
pub fn loss_gradcheck(
    params: &NetworkParams<f64>,
    pairs: &[&ShapePair],
    kind: LossKind,
    mode: Mode,
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradReport> {
    let sources: Vec<&PointSet> = pairs.iter().map(|p| &p.source).collect();
    let targets: Vec<&PointSet> = pairs.iter().map(|p| &p.target).collect();
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let bound = work.bind(&mut g);
    let fwd = work.forward_batch(&mut g, &bound, &sources, &targets, mode)?;
    let loss = batch_loss(&mut g, &fwd, &targets, kind)?;
    let base_signature = g.branch_signature();
    g.backward(loss)?;
    work.accumulate_grads(&g, &bound);
    let grads: Vec<Matrix<f64>> = work
        .tensors_mut()
        .iter()
        .map(|t| t.grad().cloned().unwrap_or_else(|| Matrix::zeros(t.shape().0, t.shape().1)))
        .collect();

    let mut stream = Stream::new(seed);
    let mut report = GradReport { rel_errors: Vec::new(), analytic: Vec::new(), numeric: Vec::new(), skipped: 0 };
    for (k, grad) in grads.iter().enumerate() {
        let mut candidates: Vec<usize> = (0..grad.as_slice().len()).collect();
        stream.shuffle(&mut candidates);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &e in &candidates {
            if analytic.len() == per_tensor {
                break;
            }
            let probe = |delta: f64| -> Result<(f64, u64)> {
                let mut p = params.clone();
                p.tensors_mut()[k].value.as_mut_slice()[e] += delta;
                batch_loss_value(&p, &sources, &targets, kind, mode)
            };
            let (up, sig_up) = probe(h)?;
            let (down, sig_down) = probe(-h)?;
            if sig_up != base_signature || sig_down != base_signature {
                report.skipped += 1;
                continue;
            }
            numeric.push((up - down) / (2.0 * h));
            analytic.push(grad.as_slice()[e]);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale =
            analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        report.rel_errors.push(if scale < GRADCHECK_NOISE_FLOOR { 0.0 } else { diff / scale });
        report.analytic.push(Matrix::from_vec(1, analytic.len(), analytic)?);
        report.numeric.push(Matrix::from_vec(1, numeric.len(), numeric)?);
    }
    Ok(report)
}
