use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    /// `[0, scale]` to black..white, negative values clipped to black.
    #[default]
    Gray,
    /// `[-scale, scale]` to blue..white..red.
    Diverging,
}

/// How grid values are mapped to the colormap range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Scale by the image's own largest magnitude.
    PerImageMax,
    /// Scale by a fixed value, typically the largest magnitude of a
    /// reference grid.
    Shared(f64),
}

impl Normalization {
    /// Shared normalization against `reference`.
    pub fn shared_with(reference: ArrayView2<'_, f64>) -> Self {
        Normalization::Shared(max_abs(reference))
    }
}

fn max_abs(grid: ArrayView2<'_, f64>) -> f64 {
    grid.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn colour(v: f64, scale: f64, map: Colormap) -> [u8; 3] {
    let t = if scale > 0.0 { v / scale } else { 0.0 };
    let byte = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    match map {
        Colormap::Gray => {
            let g = byte(t);
            [g, g, g]
        }
        Colormap::Diverging => {
            let t = t.clamp(-1.0, 1.0);
            if t >= 0.0 {
                [255, byte(1.0 - t), byte(1.0 - t)]
            } else {
                [byte(1.0 + t), byte(1.0 + t), 255]
            }
        }
    }
}

/// 8-bit RGB pixels of `grid`; row `i` of the grid is image row `i`.
pub fn colourize(
    grid: ArrayView2<'_, f64>,
    map: Colormap,
    norm: Normalization,
) -> Result<Array2<[u8; 3]>> {
    ensure!(
        grid.iter().all(|v| v.is_finite()),
        "cannot render non-finite values"
    );
    let scale = match norm {
        Normalization::PerImageMax => max_abs(grid),
        Normalization::Shared(s) => {
            ensure!(
                s.is_finite() && s >= 0.0,
                "shared scale must be finite and nonnegative, got {s}"
            );
            s
        }
    };
    Ok(grid.mapv(|v| colour(v, scale, map)))
}

fn write_rgb(path: &Path, pixels: &Array2<[u8; 3]>) -> Result<()> {
    let (h, w) = pixels.dim();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let bytes: Vec<u8> = pixels.iter().flatten().copied().collect();
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Renders one grid to an 8-bit PNG.
pub fn render_png(
    grid: ArrayView2<'_, f64>,
    path: impl AsRef<Path>,
    map: Colormap,
    norm: Normalization,
) -> Result<()> {
    write_rgb(path.as_ref(), &colourize(grid, map, norm)?)
}

/// Renders grids side by side, all on the scale of the first one, separated
/// by a one-pixel white column.
pub fn render_row(
    grids: &[ArrayView2<'_, f64>],
    path: impl AsRef<Path>,
    map: Colormap,
) -> Result<()> {
    ensure!(!grids.is_empty(), "nothing to render");
    let (h, w) = grids[0].dim();
    ensure!(
        grids.iter().all(|g| g.dim() == (h, w)),
        "grids differ in shape"
    );
    let norm = Normalization::shared_with(grids[0]);
    let width = grids.len() * (w + 1) - 1;
    let mut canvas = Array2::from_elem((h, width), [255u8; 3]);
    for (k, g) in grids.iter().enumerate() {
        let tile = colourize(*g, map, norm)?;
        canvas
            .slice_mut(ndarray::s![.., k * (w + 1)..k * (w + 1) + w])
            .assign(&tile);
    }
    write_rgb(path.as_ref(), &canvas)
}
