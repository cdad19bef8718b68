use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
use super::loss::{smooth_target, LossSpec};
use super::optim::{adam_step, AdamConfig, OptimizerState};
use crate::error::{ensure, Error, Result};
use crate::io::{read_csv, write_csv, EpochMetrics, SampleData};
use crate::model::{stack_batch, tile_bands, WideBNetConfig, WideBNetParams};
use crate::tensornet::Parameters;

fn default_epochs() -> usize {
    150
}

fn default_batch() -> usize {
    32
}

fn default_val() -> Option<usize> {
    Some(256)
}

fn default_checkpoint_every() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// Training-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Size of the fixed validation subset; all held-out samples when absent.
    #[serde(default = "default_val")]
    pub val_samples: Option<usize>,
    /// Epochs between checkpoints; 0 writes only the final one.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Divide each band by its training-set RMS.
    #[serde(default = "default_true")]
    pub normalize_inputs: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: default_epochs(),
            batch: default_batch(),
            seed: 0,
            loss: LossSpec::default(),
            adam: AdamConfig::default(),
            val_samples: default_val(),
            checkpoint_every: default_checkpoint_every(),
            normalize_inputs: true,
        }
    }
}

/// Network-ready samples: tiled inputs and smoothed targets.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub inputs: Vec<Vec<Array2<f32>>>,
    pub targets: Vec<Array2<f32>>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Root-mean-square magnitude of each band over `samples`; 1 for empty or
/// zero bands.
pub fn input_scales(samples: &[SampleData]) -> Vec<f64> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    (0..first.bands.len())
        .map(|b| {
            let (sum, count) = samples.iter().fold((0.0f64, 0usize), |(s, c), x| {
                let band = &x.bands[b];
                (
                    s + band.iter().map(|v| v.norm_sqr() as f64).sum::<f64>(),
                    c + band.len(),
                )
            });
            let rms = if count > 0 {
                (sum / count as f64).sqrt()
            } else {
                0.0
            };
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect()
}

/// Scales, tiles and smooths `samples` for `cfg`.
pub fn prepare(
    samples: &[SampleData],
    cfg: &WideBNetConfig,
    scales: &[f64],
    loss: &LossSpec,
) -> Result<PreparedSet> {
    ensure!(
        scales.len() == cfg.band_sizes.len(),
        "{} input scales for {} bands",
        scales.len(),
        cfg.band_sizes.len()
    );
    let n = cfg.grid.side();
    let prepared = samples
        .par_iter()
        .map(|s| {
            ensure!(
                s.eta.dim() == (n, n),
                "perturbation {:?} does not match the {n} x {n} grid",
                s.eta.dim()
            );
            let bands: Vec<Array3<f32>> = s
                .real_channels()
                .into_iter()
                .zip(scales)
                .map(|(b, &k)| b.mapv(|v| (v as f64 / k) as f32))
                .collect();
            let views: Vec<_> = bands.iter().map(|b| b.view()).collect();
            let tiles = tile_bands(cfg, &views)?;
            let target = smooth_target(s.eta.mapv(f64::from).view(), loss)?.mapv(|v| v as f32);
            Ok((tiles, target))
        })
        .collect::<Result<Vec<_>>>()?;
    let (inputs, targets) = prepared.into_iter().unzip();
    Ok(PreparedSet { inputs, targets })
}

fn batch_inputs(set: &PreparedSet, idx: &[usize]) -> Result<Vec<Array3<f32>>> {
    let refs: Vec<&[Array2<f32>]> = idx.iter().map(|&i| set.inputs[i].as_slice()).collect();
    stack_batch(&refs)
}

/// Per-sample pixel loss and image-wise relative loss.
fn sample_losses(pred: &Array3<f32>, set: &PreparedSet, idx: &[usize]) -> Vec<(f64, f64)> {
    idx.iter()
        .enumerate()
        .map(|(b, &i)| {
            let p = pred.index_axis(Axis(0), b);
            let t = &set.targets[i];
            let (mut err, mut norm) = (0.0f64, 0.0f64);
            for (&a, &y) in p.iter().zip(t.iter()) {
                let d = (a - y) as f64;
                err += d * d;
                norm += (y as f64) * (y as f64);
            }
            (err, if norm > 0.0 { err / norm } else { f64::NAN })
        })
        .collect()
}

/// Network predictions for the samples `idx` of `set`, in batches.
pub fn predict(
    params: &WideBNetParams<f32>,
    set: &PreparedSet,
    idx: &[usize],
    batch: usize,
) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch.max(1)) {
        let pred = params.forward(&batch_inputs(set, chunk)?)?;
        out.extend(pred.outer_iter().map(|p| p.to_owned()));
    }
    Ok(out)
}

/// Mean pixel loss and mean relative loss over the samples `idx`.
pub fn evaluate(
    params: &WideBNetParams<f32>,
    set: &PreparedSet,
    idx: &[usize],
    batch: usize,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut pixel, mut rel) = (0.0, 0.0);
    for chunk in idx.chunks(batch.max(1)) {
        let pred = params.forward(&batch_inputs(set, chunk)?)?;
        for (p, r) in sample_losses(&pred, set, chunk) {
            pixel += p;
            rel += r;
        }
    }
    Ok((pixel / idx.len() as f64, rel / idx.len() as f64))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Fixed validation subset drawn once from the seed.
pub fn validation_indices(len: usize, wanted: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(k) = wanted.filter(|&k| k < len) {
        let mut rng = epoch_rng(seed, usize::MAX);
        idx.shuffle(&mut rng);
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

const METRICS: &str = "metrics.csv";
const CHECKPOINT_DIR: &str = "checkpoint";

/// Trains from scratch or resumes `resume`. With `out`, writes
/// `metrics.csv` after every epoch and checkpoints under `out/checkpoint`.
/// Epoch `e` shuffles with RNG stream `e` of the seed, so an interrupted run
/// resumed from a checkpoint replays the remaining epochs exactly.
pub fn train(
    train_set: &[SampleData],
    val_set: &[SampleData],
    model: &WideBNetConfig,
    settings: &TrainSettings,
    out: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    model.validate()?;
    ensure!(!train_set.is_empty(), "empty training set");
    ensure!(settings.batch > 0, "batch size must be positive");
    let (mut params, mut optimizer, scales, start_epoch) = match resume {
        Some(ck) => {
            if &ck.meta.model != model {
                return Err(Error::config(
                    "checkpoint model differs from the requested model",
                ));
            }
            let s = &ck.meta.settings;
            if s.seed != settings.seed
                || s.batch != settings.batch
                || s.loss != settings.loss
                || s.adam != settings.adam
            {
                return Err(Error::config(
                    "checkpoint settings differ from the requested run",
                ));
            }
            (ck.params, ck.optimizer, ck.meta.input_scales, ck.meta.epoch)
        }
        None => {
            let mut rng = epoch_rng(settings.seed, 0);
            let params = WideBNetParams::<f32>::init(model, &mut rng)?;
            let optimizer = OptimizerState::new(&params, settings.adam);
            let scales = if settings.normalize_inputs {
                input_scales(train_set)
            } else {
                vec![1.0; model.band_sizes.len()]
            };
            (params, optimizer, scales, 0)
        }
    };
    let train_data = prepare(train_set, model, &scales, &settings.loss)?;
    let val_data = prepare(val_set, model, &scales, &settings.loss)?;
    let val_idx = validation_indices(val_data.len(), settings.val_samples, settings.seed);
    let mut history: Vec<EpochMetrics> = match out {
        Some(dir) if start_epoch > 0 && dir.join(METRICS).exists() => {
            let mut rows: Vec<EpochMetrics> = read_csv(dir.join(METRICS))?;
            rows.retain(|r| r.epoch <= start_epoch);
            rows
        }
        _ => Vec::new(),
    };
    let started = Instant::now();
    let wall_offset = history.last().map_or(0.0, |r| r.wall_time_s);
    let snapshot =
        |params: &WideBNetParams<f32>, optimizer: &OptimizerState<f32>, epoch: usize| Checkpoint {
            meta: CheckpointMeta {
                format: CHECKPOINT_FORMAT.into(),
                version: 1,
                model: model.clone(),
                settings: settings.clone(),
                epoch,
                step: optimizer.step,
                input_scales: scales.clone(),
                param_names: params.names(),
            },
            params: params.clone(),
            optimizer: optimizer.clone(),
        };
    for epoch in start_epoch + 1..=settings.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut epoch_rng(settings.seed, epoch));
        let lr = optimizer.learning_rate();
        let (mut pixel_sum, mut rel_sum) = (0.0, 0.0);
        for chunk in order.chunks(settings.batch) {
            let inputs = batch_inputs(&train_data, chunk)?;
            let (pred, tape) = params.forward_taped(&inputs)?;
            let losses = sample_losses(&pred, &train_data, chunk);
            let batch_loss: f64 = losses.iter().map(|l| l.0).sum::<f64>() / chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, step {} (batch {:?})",
                    optimizer.step, chunk
                )));
            }
            for (p, r) in &losses {
                pixel_sum += p;
                rel_sum += r;
            }
            let scale = 2.0 / chunk.len() as f32;
            let mut d_out = pred;
            for (b, &i) in chunk.iter().enumerate() {
                let mut d = d_out.index_axis_mut(Axis(0), b);
                d -= &train_data.targets[i];
                d *= scale;
            }
            let grads = params.backward(&tape, &d_out)?;
            adam_step(&mut optimizer, &mut params, &grads)?;
        }
        let (val_pixel, val_rel) = evaluate(&params, &val_data, &val_idx, settings.batch)?;
        let row = EpochMetrics {
            epoch,
            step: optimizer.step,
            lr,
            train_pixel_loss: pixel_sum / train_data.len() as f64,
            train_rel_loss: rel_sum / train_data.len() as f64,
            val_pixel_loss: val_pixel,
            val_rel_loss: val_rel,
            wall_time_s: wall_offset + started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train pixel {:.4e} rel {:.4e}, val pixel {:.4e} rel {:.4e}",
            row.train_pixel_loss,
            row.train_rel_loss,
            row.val_pixel_loss,
            row.val_rel_loss
        );
        history.push(row);
        if let Some(dir) = out {
            write_csv(dir.join(METRICS), &history)?;
            let periodic = settings.checkpoint_every > 0 && epoch % settings.checkpoint_every == 0;
            if periodic || epoch == settings.epochs {
                snapshot(&params, &optimizer, epoch).save(dir.join(CHECKPOINT_DIR))?;
            }
        }
    }
    let checkpoint = snapshot(&params, &optimizer, settings.epochs.max(start_epoch));
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}
