use ndarray::{Array3, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{cells_at, GridSpec};
use crate::model::{WideBNetConfig, WideBNetParams};
use crate::tensornet::{Conv2d, Parameters, PatchAffine, ResUnit};

/// Default failure threshold for a gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-5;

/// Worst relative discrepancy between analytic and central-difference
/// derivatives for one layer kind.
#[derive(Debug, Clone, Serialize)]
pub struct GradEntry {
    pub kind: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares analytic derivatives against central differences.
///
/// `values` are the point of evaluation, `analytic` the claimed gradient and
/// `f` the scalar function of a perturbed copy. At most `max_checks` entries
/// are probed (chosen by `rng`). Each discrepancy is measured relative to the
/// larger of the two derivatives, floored at `1e-4` of the largest analytic
/// entry so that vanishing components do not dominate.
pub fn central_difference_check<R: Rng + ?Sized>(
    values: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    max_checks: usize,
    rng: &mut R,
) -> (usize, f64) {
    let n = values.len();
    let scale = analytic.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = (1e-4 * scale).max(1e-12);
    let picks: Vec<usize> = if n <= max_checks {
        (0..n).collect()
    } else {
        (0..max_checks).map(|_| rng.random_range(0..n)).collect()
    };
    let mut x = values.to_vec();
    let mut worst = 0.0f64;
    for &i in &picks {
        let h = 1e-6 * values[i].abs().max(1.0);
        x[i] = values[i] + h;
        let fp = f(&x);
        x[i] = values[i] - h;
        let fm = f(&x);
        x[i] = values[i];
        let numeric = (fp - fm) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max(err);
    }
    (picks.len(), worst)
}

fn flatten<P: Parameters<f64>>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit(&mut |_, a| out.extend(a.iter().copied()));
    out
}

fn unflatten<P: Parameters<f64>>(p: &mut P, flat: &[f64]) {
    let mut i = 0;
    p.visit_mut(&mut |_, mut a| {
        for v in a.iter_mut() {
            *v = flat[i];
            i += 1;
        }
    });
}

fn random_array<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn dot(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks a layer `y = f(θ, x)` under the loss `⟨w, y⟩` with random `w`,
/// for both parameter and input gradients.
fn check_layer<P, R>(
    kind: &str,
    params: &P,
    x: &ArrayD<f64>,
    forward: impl Fn(&P, &ArrayD<f64>) -> ArrayD<f64>,
    backward: impl Fn(&P, &ArrayD<f64>, &ArrayD<f64>) -> (P, ArrayD<f64>),
    max_checks: usize,
    rng: &mut R,
) -> Vec<GradEntry>
where
    P: Parameters<f64> + Clone,
    R: Rng + ?Sized,
{
    let y = forward(params, x);
    let w = random_array(y.shape(), rng);
    let (g_params, g_x) = backward(params, x, &w);
    let theta = flatten(params);
    let (n1, e1) = central_difference_check(
        &theta,
        &flatten(&g_params),
        |t| {
            let mut p = params.clone();
            unflatten(&mut p, t);
            dot(&w, &forward(&p, x))
        },
        max_checks,
        rng,
    );
    let xv: Vec<f64> = x.iter().copied().collect();
    let (n2, e2) = central_difference_check(
        &xv,
        &g_x.iter().copied().collect::<Vec<_>>(),
        |t| {
            let xp = ArrayD::from_shape_vec(x.raw_dim(), t.to_vec()).expect("same length");
            dot(&w, &forward(params, &xp))
        },
        max_checks,
        rng,
    );
    vec![
        GradEntry {
            kind: format!("{kind} (parameters)"),
            checked: n1,
            max_rel_error: e1,
        },
        GradEntry {
            kind: format!("{kind} (input)"),
            checked: n2,
            max_rel_error: e2,
        },
    ]
}

/// Gradient check of a patch affine layer with the given kernel.
pub fn check_patch_affine<R: Rng + ?Sized>(
    groups: usize,
    kernel: usize,
    c_in: usize,
    c_out: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<GradEntry>> {
    let mut layer = PatchAffine::<f64>::glorot(groups, kernel, c_in, c_out, rng);
    layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let x = random_array(&[batch, groups * kernel, c_in], rng);
    Ok(check_layer(
        &format!("patch_affine k={kernel}"),
        &layer,
        &x,
        |p, x| {
            let x3 = x.view().into_dimensionality().expect("rank 3");
            p.forward(x3).expect("valid shapes").into_dyn()
        },
        |p, x, w| {
            let mut g = PatchAffine::zeros(p.groups(), p.kernel, p.c_in(), p.out_dim());
            let x3 = x.view().into_dimensionality().expect("rank 3");
            let w3 = w.view().into_dimensionality().expect("rank 3");
            let dx = p.backward(x3, w3, &mut g).expect("valid shapes");
            (g, dx.into_dyn())
        },
        400,
        rng,
    ))
}

/// Gradient check of a same-padded convolution.
pub fn check_conv2d<R: Rng + ?Sized>(
    k: usize,
    c_in: usize,
    c_out: usize,
    side: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<GradEntry>> {
    let mut layer = Conv2d::<f64>::glorot(k, c_in, c_out, rng);
    layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let x = random_array(&[batch, side, side, c_in], rng);
    Ok(check_layer(
        &format!("conv2d {k}x{k}"),
        &layer,
        &x,
        |p, x| {
            let x4 = x.view().into_dimensionality().expect("rank 4");
            p.forward(x4).expect("valid shapes").into_dyn()
        },
        |p, x, w| {
            let (kh, kw, ci, co) = p.kernel.dim();
            let mut g = Conv2d::zeros(kh, kw, ci, co);
            let x4 = x.view().into_dimensionality().expect("rank 4");
            let w4 = w.view().into_dimensionality().expect("rank 4");
            let dx: Array4<f64> = p.backward(x4, w4, &mut g).expect("valid shapes");
            (g, dx.into_dyn())
        },
        400,
        rng,
    ))
}

/// Gradient check of a residual unit.
pub fn check_res_unit<R: Rng + ?Sized>(
    groups: usize,
    c: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<GradEntry>> {
    let mut affine = PatchAffine::<f64>::glorot(groups, 1, c, c, rng);
    affine.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let unit = ResUnit::new(affine)?;
    let x = random_array(&[batch, groups, c], rng);
    Ok(check_layer(
        "resnet_unit",
        &unit,
        &x,
        |p, x| {
            let x3 = x.view().into_dimensionality().expect("rank 3");
            p.forward(x3).expect("valid shapes").into_dyn()
        },
        |p, x, w| {
            let a = &p.affine;
            let mut g = ResUnit::new(PatchAffine::zeros(a.groups(), 1, a.c_in(), a.out_dim()))
                .expect("square");
            let x3 = x.view().into_dimensionality().expect("rank 3");
            let (_, cache) = p.forward_cached(x3).expect("valid shapes");
            let w3: ndarray::ArrayView3<'_, f64> = w.view().into_dimensionality().expect("rank 3");
            let dx = p.backward(&cache, w3, &mut g).expect("valid shapes");
            (g, dx.into_dyn())
        },
        400,
        rng,
    ))
}

fn random_inputs<R: Rng + ?Sized>(
    cfg: &WideBNetConfig,
    batch: usize,
    rng: &mut R,
) -> Vec<Array3<f64>> {
    cfg.grid
        .band_levels()
        .map(|level| {
            let dim = if cfg.band_size(level) > 0 {
                cfg.v_in_dim(level)
            } else {
                0
            };
            Array3::from_shape_simple_fn((batch, cells_at(level), dim), || {
                rng.random_range(-1.0..1.0)
            })
        })
        .collect()
}

fn randomize_biases<R: Rng + ?Sized>(p: &mut WideBNetParams<f64>, rng: &mut R) {
    p.visit_mut(&mut |name, mut a| {
        if name.ends_with("bias") {
            a.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    });
}

/// Gradient check of the full network under the loss `⟨w, prediction⟩`.
pub fn check_model<R: Rng + ?Sized>(
    cfg: &WideBNetConfig,
    batch: usize,
    max_checks: usize,
    rng: &mut R,
) -> Result<GradEntry> {
    let mut params = WideBNetParams::<f64>::init(cfg, rng)?;
    randomize_biases(&mut params, rng);
    let inputs = random_inputs(cfg, batch, rng);
    let (y, tape) = params.forward_taped(&inputs)?;
    let w = Array3::from_shape_simple_fn(y.raw_dim(), || rng.random_range(-1.0..1.0));
    let grads = params.backward(&tape, &w)?;
    let theta = flatten(&params);
    let (checked, err) = central_difference_check(
        &theta,
        &flatten(&grads),
        |t| {
            let mut p = params.clone();
            unflatten(&mut p, t);
            let out = p.forward(&inputs).expect("valid shapes");
            out.iter().zip(w.iter()).map(|(a, b)| a * b).sum()
        },
        max_checks,
        rng,
    );
    let mut label = if cfg.strict_butterfly {
        "strict butterfly"
    } else {
        "dense"
    }
    .to_string();
    if !cfg.use_switch {
        label.push_str(", no switch");
    }
    Ok(GradEntry {
        kind: format!(
            "widebnet L={} s={} r={} {label}",
            cfg.levels(),
            cfg.grid.leaf(),
            cfg.rank
        ),
        checked,
        max_rel_error: err,
    })
}

/// Tiny configuration used by the end-to-end check (L=2, s=2, r=2).
pub fn tiny_config(strict: bool) -> WideBNetConfig {
    let grid = GridSpec::new(2, 2).expect("valid grid");
    let mut cfg = WideBNetConfig::new(grid, 2, vec![1, 1]).expect("valid config");
    cfg.cnn_layers = 2;
    cfg.cnn_width = 3;
    cfg.cnn_kernel = 3;
    cfg.res_units = 2;
    cfg.strict_butterfly = strict;
    cfg
}

/// Runs every layer-kind check plus the full tiny model.
pub fn grad_check(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    entries.extend(check_patch_affine(4, 1, 3, 5, 2, &mut rng)?);
    entries.extend(check_patch_affine(4, 4, 3, 6, 2, &mut rng)?);
    entries.extend(check_conv2d(3, 2, 3, 6, 2, &mut rng)?);
    entries.extend(check_conv2d(5, 1, 2, 7, 1, &mut rng)?);
    entries.extend(check_res_unit(4, 5, 3, &mut rng)?);
    entries.push(check_model(&tiny_config(false), 2, 2000, &mut rng)?);
    entries.push(check_model(&tiny_config(true), 2, 2000, &mut rng)?);
    let mut no_switch = tiny_config(false);
    no_switch.use_switch = false;
    entries.push(check_model(&no_switch, 1, 600, &mut rng)?);
    Ok(GradReport {
        entries,
        tolerance: GRAD_TOLERANCE,
    })
}
