use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Array3, Ix2, Ix3};
use num_complex::Complex32;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{read_records, write_records, ArrayData};
use crate::error::{Error, Result};
use crate::wavesim::{assign_bands, generate_sample, Scatterer, SimConfig};

pub const DATASET_FORMAT: &str = "widebnet-dataset";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandInfo {
    pub level: usize,
    pub frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    /// RNG stream of the sample.
    pub index: u64,
    /// Path relative to the dataset directory.
    pub file: String,
    pub scatterers: Vec<Scatterer>,
}

/// Dataset directory description, stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub sim: SimConfig,
    pub bands: Vec<BandInfo>,
    pub train: Vec<SampleEntry>,
    pub test: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> &[SampleEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn band_sizes(&self) -> Vec<usize> {
        self.bands.iter().map(|b| b.frequencies.len()).collect()
    }
}

/// One stored sample: the perturbation and the data of each band.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    pub eta: Array2<f32>,
    /// `[src, rcv, n_ω]` per band, coarsest band first.
    pub bands: Vec<Array3<Complex32>>,
}

impl SampleData {
    /// Real network inputs `[src, rcv, 2n_ω]` per band, interleaving real and
    /// imaginary parts.
    pub fn real_channels(&self) -> Vec<Array3<f32>> {
        self.bands
            .iter()
            .map(|b| {
                let (s, r, k) = b.dim();
                Array3::from_shape_fn((s, r, 2 * k), |(i, j, c)| {
                    let v = b[[i, j, c / 2]];
                    if c % 2 == 0 {
                        v.re
                    } else {
                        v.im
                    }
                })
            })
            .collect()
    }
}

fn record_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_sample(path: &Path, sample: &SampleData) -> Result<()> {
    let mut records = vec![ArrayData::F32(sample.eta.clone().into_dyn())];
    records.extend(
        sample
            .bands
            .iter()
            .map(|b| ArrayData::C64(b.clone().into_dyn())),
    );
    write_records(path, &records)
}

pub fn read_sample(path: &Path) -> Result<SampleData> {
    let mut records = read_records(path)?.into_iter();
    let eta = records
        .next()
        .and_then(ArrayData::into_f32)
        .and_then(|a| a.into_dimensionality::<Ix2>().ok())
        .ok_or_else(|| record_error(path, "first record must be a 2D f32 perturbation"))?;
    let bands = records
        .map(|r| {
            r.into_c64()
                .and_then(|a| a.into_dimensionality::<Ix3>().ok())
                .ok_or_else(|| record_error(path, "band records must be 3D complex"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleData { eta, bands })
}

/// Generates `ntrain + ntest` samples into `dir`. Training sample `i` uses
/// RNG stream `i`, test sample `j` stream `ntrain + j`; output files depend
/// only on `(cfg, seed, ntrain, ntest)`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    cfg: &SimConfig,
    seed: u64,
    ntrain: usize,
    ntest: usize,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    cfg.validate()?;
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let bands = assign_bands(&cfg.frequencies, &cfg.grid)?
        .into_iter()
        .enumerate()
        .map(|(i, frequencies)| BandInfo {
            level: cfg.grid.mid_level() + i,
            frequencies,
        })
        .collect();
    let total = ntrain + ntest;
    let done = AtomicUsize::new(0);
    let entries = (0..total)
        .into_par_iter()
        .map(|k| {
            let (split, local) = if k < ntrain {
                (Split::Train, k)
            } else {
                (Split::Test, k - ntrain)
            };
            let file = format!("{}/{:06}.wbn", split.name(), local);
            let sample = generate_sample(seed, k as u64, cfg)?;
            let data = SampleData {
                eta: sample.eta.mapv(|v| v as f32),
                bands: sample
                    .data
                    .bands
                    .iter()
                    .map(|b| b.data.mapv(|v| Complex32::new(v.re as f32, v.im as f32)))
                    .collect(),
            };
            write_sample(&dir.join(&file), &data)?;
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % 100 == 0 || n == total {
                log::info!("generated {n}/{total} samples");
            }
            Ok(SampleEntry {
                index: k as u64,
                file,
                scatterers: sample.scatterers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = entries.into_iter();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        seed,
        sim: cfg.clone(),
        bands,
        train: entries.by_ref().take(ntrain).collect(),
        test: entries.collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format != DATASET_FORMAT {
            return Err(record_error(
                &path,
                format!("unexpected format {:?}", manifest.format),
            ));
        }
        Ok(Dataset { dir, manifest })
    }

    pub fn len(&self, split: Split) -> usize {
        self.manifest.entries(split).len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    pub fn load_sample(&self, split: Split, k: usize) -> Result<SampleData> {
        let entry = self.manifest.entries(split).get(k).ok_or_else(|| {
            Error::Domain(format!("sample {k} outside the {} split", split.name()))
        })?;
        read_sample(&self.dir.join(&entry.file))
    }

    /// Loads every sample of a split, in manifest order.
    pub fn load(&self, split: Split) -> Result<Vec<SampleData>> {
        (0..self.len(split))
            .into_par_iter()
            .map(|k| self.load_sample(split, k))
            .collect()
    }
}
