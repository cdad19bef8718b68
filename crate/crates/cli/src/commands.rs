use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::Serialize;
use widebnet::imaging::{
    argmax, farfield_matrix, multifreq_image, tikhonov_image, uniform_weights, FarFieldOperator,
    FarFieldScaling, KrylovConfig, DEFAULT_ENTRY_CAP,
};
use widebnet::io::{render_row, write_dataset, write_records, ArrayData, Colormap, Dataset, Split};
use widebnet::model::param_count;
use widebnet::training::{predict, prepare, relative_to_target, train, Checkpoint};
use widebnet::wavesim::{Raster, Scatterer};

use crate::config::ExperimentConfig;

pub struct GenDataArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub ntrain: usize,
    pub ntest: usize,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let manifest = write_dataset(&args.out, cfg.sim()?, args.seed, args.ntrain, args.ntest)?;
    println!(
        "wrote {} training and {} test samples to {} (bands {:?})",
        manifest.train.len(),
        manifest.test.len(),
        args.out.display(),
        manifest.band_sizes()
    );
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub resume: bool,
}

pub fn train_model(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model = cfg.model()?;
    let mut settings = cfg.train.clone();
    if let Some(e) = args.epochs {
        settings.epochs = e;
    }
    if let Some(b) = args.batch {
        settings.batch = b;
    }
    if let Some(s) = args.seed {
        settings.seed = s;
    }
    let data = Dataset::open(&args.data)?;
    let sim = &data.manifest.sim;
    ensure!(
        sim.grid == model.grid,
        "dataset grid {:?} differs from the network grid {:?}",
        sim.grid,
        model.grid
    );
    ensure!(
        data.manifest.band_sizes() == model.band_sizes,
        "dataset bands {:?} differ from the network bands {:?}",
        data.manifest.band_sizes(),
        model.band_sizes
    );
    let resume = if args.resume {
        let dir = args.out.join("checkpoint");
        Some(Checkpoint::load(&dir).with_context(|| format!("resuming from {}", dir.display()))?)
    } else {
        None
    };
    let train_set = data.load(Split::Train)?;
    let val_set = data.load(Split::Test)?;
    log::info!(
        "training {} parameters on {} samples, validating on {}",
        param_count(model),
        train_set.len(),
        val_set.len()
    );
    fs::create_dir_all(&args.out)?;
    let outcome = train(
        &train_set,
        &val_set,
        model,
        &settings,
        Some(&args.out),
        resume,
    )?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: train pixel loss {:.4e}, validation relative loss {:.4e}",
            last.epoch, last.train_pixel_loss, last.val_rel_loss
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SampleReport {
    index: usize,
    pixel_loss: f64,
    relative_loss: f64,
    argmax: (usize, usize),
    nearest_centre_px: f64,
}

#[derive(Debug, Serialize)]
struct InferSummary {
    split: Split,
    samples: usize,
    mean_pixel_loss: f64,
    mean_relative_loss: f64,
    within_2px: f64,
    per_sample: Vec<SampleReport>,
}

/// Distance in pixels from pixel `at` to the nearest scatterer centre.
pub fn nearest_centre(at: (usize, usize), scatterers: &[Scatterer], raster: &Raster) -> f64 {
    let h = raster.h();
    scatterers
        .iter()
        .map(|s| {
            let ci = (s.position[0] - raster.lo) / h - 0.5;
            let cj = (s.position[1] - raster.lo) / h - 0.5;
            ((at.0 as f64 - ci).powi(2) + (at.1 as f64 - cj).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split: Split,
    pub png: bool,
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let data = Dataset::open(&args.data)?;
    let samples = data.load(args.split)?;
    ensure!(
        !samples.is_empty(),
        "the {} split is empty",
        args.split.name()
    );
    let meta = &ck.meta;
    let set = prepare(
        &samples,
        &meta.model,
        &meta.input_scales,
        &meta.settings.loss,
    )?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let preds = predict(&ck.params, &set, &idx, meta.settings.batch)?;
    let raster = data.manifest.sim.raster();
    let dir = args.out.join(args.split.name());
    fs::create_dir_all(&dir)?;
    if args.png {
        fs::create_dir_all(args.out.join("png"))?;
    }
    let mut reports = Vec::with_capacity(preds.len());
    for (k, pred) in preds.iter().enumerate() {
        let pred64 = pred.mapv(f64::from);
        let target = set.targets[k].mapv(f64::from);
        let pixel_loss = (&pred64 - &target).mapv(|v| v * v).sum();
        let relative_loss = relative_to_target(pred64.view(), target.view())?;
        let at = argmax(&pred64);
        let scatterers = &data.manifest.entries(args.split)[k].scatterers;
        reports.push(SampleReport {
            index: k,
            pixel_loss,
            relative_loss,
            argmax: at,
            nearest_centre_px: nearest_centre(at, scatterers, &raster),
        });
        write_records(
            dir.join(format!("{k:06}.wbn")),
            &[ArrayData::F32(pred.clone().into_dyn())],
        )?;
        if args.png {
            let path = args
                .out
                .join("png")
                .join(format!("{}_{k:06}.png", args.split.name()));
            render_row(&[target.view(), pred64.view()], path, Colormap::Gray)?;
        }
    }
    let count = reports.len() as f64;
    let summary = InferSummary {
        split: args.split,
        samples: reports.len(),
        mean_pixel_loss: reports.iter().map(|r| r.pixel_loss).sum::<f64>() / count,
        mean_relative_loss: reports.iter().map(|r| r.relative_loss).sum::<f64>() / count,
        within_2px: reports
            .iter()
            .filter(|r| r.nearest_centre_px <= 2.0)
            .count() as f64
            / count,
        per_sample: reports,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "{} samples: mean pixel loss {:.4e}, mean relative loss {:.4e}, argmax within 2 px {:.1}%",
        summary.samples,
        summary.mean_pixel_loss,
        summary.mean_relative_loss,
        100.0 * summary.within_2px
    );
    Ok(())
}

pub enum FrequencyChoice {
    Single(f64),
    All,
}

pub struct ImageArgs {
    pub data: PathBuf,
    pub frequencies: FrequencyChoice,
    pub epsilon: f64,
    pub out: PathBuf,
    pub split: Split,
    pub limit: Option<usize>,
    pub scaling: FarFieldScaling,
    pub krylov: KrylovConfig,
    pub png: bool,
}

#[derive(Debug, Serialize)]
struct ImageReport {
    index: usize,
    iterations: usize,
    residual: f64,
    argmax: (usize, usize),
    nearest_centre_px: f64,
}

#[derive(Debug, Serialize)]
struct ImageSummary {
    split: Split,
    frequencies: Vec<f64>,
    epsilon: f64,
    scaling: FarFieldScaling,
    within_1px: f64,
    per_sample: Vec<ImageReport>,
}

pub fn image_ls(args: &ImageArgs) -> Result<()> {
    let data = Dataset::open(&args.data)?;
    let sim = &data.manifest.sim;
    // (band, slot, frequency) for every stored frequency
    let stored: Vec<(usize, usize, f64)> = data
        .manifest
        .bands
        .iter()
        .enumerate()
        .flat_map(|(b, band)| {
            band.frequencies
                .iter()
                .enumerate()
                .map(move |(k, &f)| (b, k, f))
        })
        .collect();
    let chosen: Vec<(usize, usize, f64)> = match args.frequencies {
        FrequencyChoice::All => stored.clone(),
        FrequencyChoice::Single(f) => {
            match stored.iter().find(|s| (s.2 - f).abs() <= 1e-9 * f.abs()) {
                Some(&s) => vec![s],
                None => bail!(
                    "frequency {f} Hz is not in the dataset; available: {:?}",
                    stored.iter().map(|s| s.2).collect::<Vec<_>>()
                ),
            }
        }
    };
    let raster = sim.raster();
    let ops: Vec<FarFieldOperator> = chosen
        .iter()
        .map(|&(_, _, f)| {
            farfield_matrix(
                2.0 * std::f64::consts::PI * f,
                &raster,
                &sim.acquisition,
                args.scaling,
                DEFAULT_ENTRY_CAP,
            )
        })
        .collect::<widebnet::Result<_>>()?;
    let weights = uniform_weights(ops.len());
    let total = data.len(args.split);
    let count = args.limit.map_or(total, |l| l.min(total));
    let dir = args.out.join(args.split.name());
    fs::create_dir_all(&dir)?;
    if args.png {
        fs::create_dir_all(args.out.join("png"))?;
    }
    let mut reports = Vec::with_capacity(count);
    for k in 0..count {
        let sample = data.load_sample(args.split, k)?;
        let slices: Vec<Array2<Complex64>> = chosen
            .iter()
            .map(|&(b, slot, _)| {
                sample.bands[b]
                    .slice(s![.., .., slot])
                    .mapv(|v| Complex64::new(f64::from(v.re), f64::from(v.im)))
            })
            .collect();
        let views: Vec<_> = slices.iter().map(|a| a.view()).collect();
        let image = if ops.len() == 1 {
            tikhonov_image(views[0], &ops[0], args.epsilon, &args.krylov)?
        } else {
            multifreq_image(&views, &ops, args.epsilon, &weights, &args.krylov)?
        };
        let magnitude = image.magnitude();
        let peak = magnitude.iter().cloned().fold(0.0, f64::max);
        let normalized = if peak > 0.0 {
            &magnitude / peak
        } else {
            magnitude.clone()
        };
        let at = argmax(&magnitude);
        let scatterers = &data.manifest.entries(args.split)[k].scatterers;
        write_records(
            dir.join(format!("{k:06}.wbn")),
            &[
                ArrayData::C128(image.values.clone().into_dyn()),
                ArrayData::F64(normalized.clone().into_dyn()),
            ],
        )?;
        if args.png {
            let eta = sample.eta.mapv(f64::from);
            let eta_peak = eta.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let truth = if eta_peak > 0.0 { eta / eta_peak } else { eta };
            let path = args
                .out
                .join("png")
                .join(format!("{}_{k:06}.png", args.split.name()));
            render_row(&[truth.view(), normalized.view()], path, Colormap::Gray)?;
        }
        reports.push(ImageReport {
            index: k,
            iterations: image.iterations,
            residual: image.residual,
            argmax: at,
            nearest_centre_px: nearest_centre(at, scatterers, &raster),
        });
        log::info!(
            "imaged sample {}/{count} in {} iterations",
            k + 1,
            image.iterations
        );
    }
    let n = reports.len().max(1) as f64;
    let summary = ImageSummary {
        split: args.split,
        frequencies: chosen.iter().map(|c| c.2).collect(),
        epsilon: args.epsilon,
        scaling: args.scaling,
        within_1px: reports
            .iter()
            .filter(|r| r.nearest_centre_px <= 1.0)
            .count() as f64
            / n,
        per_sample: reports,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "imaged {} samples at {:?} Hz; argmax within 1 px of a scatterer centre {:.1}%",
        summary.per_sample.len(),
        summary.frequencies,
        100.0 * summary.within_1px
    );
    Ok(())
}

pub fn param_count_cmd(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    println!("{}", param_count(cfg.model()?));
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}
