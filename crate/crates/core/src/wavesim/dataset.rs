use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acquisition::{sample_receivers, AcquisitionGeometry, AcquisitionMode};
use super::helmholtz::{
    build_helmholtz_system, planewave_source, point_source, FdOrder, Field, Medium, PmlSpec,
};
use super::scatterers::{rasterize_into, Raster, Scatterer, ShapeKind};
use crate::error::{ensure, Error, Result};
use crate::geometry::GridSpec;

fn default_extent() -> [f64; 2] {
    [-0.5, 0.5]
}

fn default_order() -> FdOrder {
    FdOrder::Second
}

fn default_background() -> f64 {
    1.0
}

fn default_counts() -> Vec<usize> {
    vec![2, 3, 4]
}

fn default_placement() -> f64 {
    0.35
}

fn default_amplitude() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Random scatterer dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererDictionary {
    pub shapes: Vec<ShapeKind>,
    /// Characteristic lengths in pixels, drawn uniformly.
    pub char_lengths: Vec<f64>,
    /// Object counts, drawn uniformly.
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    /// Centres are uniform in the disk of this radius.
    #[serde(default = "default_placement")]
    pub placement_radius: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_true")]
    pub rotate: bool,
}

/// Forward-modelling configuration for dataset synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    #[serde(default = "default_extent")]
    pub extent: [f64; 2],
    /// Probing frequencies in Hz (angular frequency `2πf`).
    pub frequencies: Vec<f64>,
    pub acquisition: AcquisitionGeometry,
    #[serde(default)]
    pub pml: PmlSpec,
    #[serde(default = "default_order")]
    pub fd_order: FdOrder,
    /// Constant background squared slowness.
    #[serde(default = "default_background")]
    pub background: f64,
    /// Background cells between the medium and the PML; derived from the
    /// acquisition radii when absent.
    #[serde(default)]
    pub padding: Option<usize>,
    pub scatterers: ScattererDictionary,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.frequencies.is_empty() {
            return err("at least one frequency is required".into());
        }
        if self
            .frequencies
            .iter()
            .any(|&f| !(f > 0.0 && f.is_finite()))
        {
            return err("frequencies must be positive".into());
        }
        if self.frequencies.windows(2).any(|w| w[0] >= w[1]) {
            return err("frequencies must be strictly increasing".into());
        }
        if self.extent[1] <= self.extent[0] {
            return err(format!("empty extent {:?}", self.extent));
        }
        if self.background <= 0.0 {
            return err("background squared slowness must be positive".into());
        }
        let d = &self.scatterers;
        if d.shapes.is_empty() || d.char_lengths.is_empty() || d.counts.is_empty() {
            return err("scatterer dictionary needs shapes, lengths and counts".into());
        }
        if d.char_lengths.iter().any(|&c| c <= 0.0) {
            return err("characteristic lengths must be positive".into());
        }
        if self.acquisition.n_src == 0 || self.acquisition.n_rcv == 0 {
            return err("acquisition needs sources and receivers".into());
        }
        Ok(())
    }

    pub fn raster(&self) -> Raster {
        Raster {
            n: self.grid.side(),
            lo: self.extent[0],
            hi: self.extent[1],
        }
    }

    pub fn spacing(&self) -> f64 {
        self.raster().h()
    }

    /// Background cells needed around the medium so that every receiver
    /// (and point source) sits inside the non-absorbing region.
    pub fn padding_cells(&self) -> usize {
        if let Some(p) = self.padding {
            return p;
        }
        let a = &self.acquisition;
        let reach = match a.mode {
            AcquisitionMode::PlaneWave => a.receiver_radius,
            AcquisitionMode::PointSource => a.receiver_radius.max(a.source_radius),
        };
        let h = self.spacing();
        let beyond = (reach - self.extent[1])
            .max(self.extent[0] + reach)
            .max(0.0);
        (beyond / h).ceil() as usize + 2
    }

    /// PML cells: the configured number of wavelengths at the lowest
    /// frequency.
    pub fn pml_cells(&self) -> usize {
        let omega = 2.0 * PI * self.frequencies[0];
        self.pml.cells(omega, self.background, self.spacing())
    }
}

/// Frequencies per band, `bands[ℓ - L/2]`.
pub type BandMap = Vec<Vec<f64>>;

/// Octave partition anchored at the highest frequency: level `L` receives
/// `(f_max/2, f_max]`, each coarser level the next lower octave. Frequencies
/// below the coarsest octave go to level `L/2` with a warning.
pub fn assign_bands(frequencies: &[f64], spec: &GridSpec) -> Result<BandMap> {
    ensure!(!frequencies.is_empty(), "no frequencies to assign");
    ensure!(
        frequencies.iter().all(|&f| f > 0.0 && f.is_finite()),
        "frequencies must be positive"
    );
    ensure!(
        frequencies.windows(2).all(|w| w[0] <= w[1]),
        "frequencies must be sorted"
    );
    let l = spec.levels();
    let mid = spec.mid_level();
    let fmax = *frequencies.last().expect("non-empty");
    let mut bands = vec![Vec::new(); l - mid + 1];
    for &f in frequencies {
        let mut level = None;
        for k in 0..=(l - mid) {
            if f > fmax / 2f64.powi(k as i32 + 1) {
                level = Some(l - k);
                break;
            }
        }
        let level = level.unwrap_or_else(|| {
            log::warn!("frequency {f} lies below the coarsest band; assigned to level {mid}");
            mid
        });
        bands[level - mid].push(f);
    }
    Ok(bands)
}

/// Scattering data for one band: `data[src, rcv, k]` at `frequencies[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub level: usize,
    pub frequencies: Vec<f64>,
    pub data: Array3<Complex64>,
}

/// Wideband data split into bands `ℓ = L/2 … L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedData {
    pub bands: Vec<Band>,
}

impl BandedData {
    /// Groups per-frequency data `[src, rcv, freq]` into bands.
    pub fn from_frequencies(
        data: &Array3<Complex64>,
        frequencies: &[f64],
        spec: &GridSpec,
    ) -> Result<Self> {
        ensure!(
            data.dim().2 == frequencies.len(),
            "data holds {} frequencies, {} given",
            data.dim().2,
            frequencies.len()
        );
        let map = assign_bands(frequencies, spec)?;
        let (ns, nr, _) = data.dim();
        let bands = map
            .into_iter()
            .enumerate()
            .map(|(i, freqs)| {
                let mut band = Array3::zeros((ns, nr, freqs.len()));
                for (k, f) in freqs.iter().enumerate() {
                    let src = frequencies
                        .iter()
                        .position(|g| g == f)
                        .expect("assigned frequency");
                    band.slice_mut(ndarray::s![.., .., k])
                        .assign(&data.slice(ndarray::s![.., .., src]));
                }
                Band {
                    level: spec.mid_level() + i,
                    frequencies: freqs,
                    data: band,
                }
            })
            .collect();
        Ok(BandedData { bands })
    }

    /// `n_ω^ℓ` per band.
    pub fn band_sizes(&self) -> Vec<usize> {
        self.bands.iter().map(|b| b.frequencies.len()).collect()
    }

    pub fn band(&self, level: usize) -> Option<&Band> {
        self.bands.iter().find(|b| b.level == level)
    }

    /// Real network input `[src, rcv, 2n_ω]`, channels `[Re f1, Im f1, Re f2, …]`.
    pub fn real_channels(&self, level: usize) -> Option<Array3<f64>> {
        self.band(level).map(|b| complex_to_channels(&b.data))
    }

    /// Frobenius norm over all bands.
    pub fn norm(&self) -> f64 {
        self.bands
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// `[a, b, k]` complex → `[a, b, 2k]` real with interleaved real/imaginary
/// channels.
pub fn complex_to_channels(data: &Array3<Complex64>) -> Array3<f64> {
    let (a, b, k) = data.dim();
    Array3::from_shape_fn((a, b, 2 * k), |(i, j, c)| {
        let v = data[[i, j, c / 2]];
        if c % 2 == 0 {
            v.re
        } else {
            v.im
        }
    })
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSample {
    pub eta: Array2<f64>,
    pub data: BandedData,
    pub scatterers: Vec<Scatterer>,
    pub seed: u64,
    pub stream: u64,
}

/// RNG for sample `index` of a dataset generated from `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the scatterer list of one sample.
pub fn draw_scatterers<R: Rng + ?Sized>(rng: &mut R, dict: &ScattererDictionary) -> Vec<Scatterer> {
    let count = dict.counts[rng.random_range(0..dict.counts.len())];
    (0..count)
        .map(|_| {
            let shape = dict.shapes[rng.random_range(0..dict.shapes.len())];
            let char_length = dict.char_lengths[rng.random_range(0..dict.char_lengths.len())];
            let radius = dict.placement_radius * rng.random::<f64>().sqrt();
            let angle = rng.random_range(0.0..2.0 * PI);
            let rotation = if dict.rotate {
                rng.random_range(0.0..2.0 * PI)
            } else {
                0.0
            };
            Scatterer {
                shape,
                char_length,
                position: [radius * angle.cos(), radius * angle.sin()],
                rotation,
                amplitude: dict.amplitude,
            }
        })
        .collect()
}

/// Solves every (frequency, source) pair for `med` and samples the
/// receivers; returns `[src, rcv, freq]`.
pub fn simulate(med: &Medium, cfg: &SimConfig) -> Result<Array3<Complex64>> {
    cfg.validate()?;
    let geom = &cfg.acquisition;
    let pad = cfg.padding_cells();
    let pml_cells = cfg.pml_cells();
    let mut out = Array3::zeros((geom.n_src, geom.n_rcv, cfg.frequencies.len()));
    for (k, &f) in cfg.frequencies.iter().enumerate() {
        let omega = 2.0 * PI * f;
        let sys = build_helmholtz_system(med, omega, cfg.fd_order, &cfg.pml, pad, pml_cells)?;
        let grid = sys.grid;
        let fields: Vec<Vec<Complex64>> = match geom.mode {
            AcquisitionMode::PlaneWave => {
                if med.eta.iter().all(|&e| e == 0.0) {
                    vec![vec![Complex64::new(0.0, 0.0); grid.unknowns()]; geom.n_src]
                } else {
                    let sources: Vec<_> = (0..geom.n_src)
                        .map(|s| planewave_source(med, &grid, omega, geom.source_direction(s)))
                        .collect();
                    sys.factorize()?.solve_many(&sources)?
                }
            }
            AcquisitionMode::PointSource => {
                let sources = (0..geom.n_src)
                    .map(|s| point_source(&grid, geom.source_position(s)))
                    .collect::<Result<Vec<_>>>()?;
                let total = sys.factorize()?.solve_many(&sources)?;
                let bg = build_helmholtz_system(
                    &med.background(),
                    omega,
                    cfg.fd_order,
                    &cfg.pml,
                    pad,
                    pml_cells,
                )?;
                let incident = bg.factorize()?.solve_many(&sources)?;
                total
                    .into_iter()
                    .zip(incident)
                    .map(|(t, i)| t.iter().zip(&i).map(|(a, b)| a - b).collect())
                    .collect()
            }
        };
        for (s, u) in fields.into_iter().enumerate() {
            let field = Field::from_flat(grid, u);
            let rec = sample_receivers(&field, geom)?;
            for (r, v) in rec.into_iter().enumerate() {
                out[[s, r, k]] = v;
            }
        }
    }
    Ok(out)
}

/// Draws scatterers for sample `index` of the dataset seeded by `seed`,
/// rasterizes `η`, simulates and bands the data.
pub fn generate_sample(seed: u64, index: u64, cfg: &SimConfig) -> Result<ScatterSample> {
    cfg.validate()?;
    let mut rng = sample_rng(seed, index);
    let scatterers = draw_scatterers(&mut rng, &cfg.scatterers);
    let raster = cfg.raster();
    let mut eta = Array2::zeros((raster.n, raster.n));
    for s in &scatterers {
        rasterize_into(&mut eta, &raster, s)?;
    }
    let med = Medium::homogeneous(eta.clone(), cfg.background, cfg.extent[0], cfg.extent[1])?;
    let raw = simulate(&med, cfg)?;
    let data = BandedData::from_frequencies(&raw, &cfg.frequencies, &cfg.grid)?;
    Ok(ScatterSample {
        eta,
        data,
        scatterers,
        seed,
        stream: index,
    })
}
