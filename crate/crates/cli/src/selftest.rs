use std::f64::consts::PI;

use anyhow::Result;
use clap::ValueEnum;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widebnet::geometry::{
    morton_flatten, morton_unflatten, perm_indices, switch_indices, GridSpec,
};
use widebnet::spectral::{
    butterfly_apply, butterfly_factorize, complementary_rank_profile, dft_matrix, fft_radix2,
    merge_even_odd, naive_dft,
};
use widebnet::training::grad_check;
use widebnet::wavesim::{
    analytic_greens, cell_centres, simulate, solve_pointsource, FdOrder, Medium, PmlSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Fft,
    Ranks,
    Greens,
    Grads,
    Perms,
    All,
}

pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    fn new(suite: &'static str, name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
        / scale
}

fn frob(m: &Array2<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn fft_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut merge) = (0.0f64, 0.0f64);
    for k in 0..=10 {
        let n = 1usize << k;
        for _ in 0..100 {
            let x = random_vec(&mut rng, n);
            let exact = naive_dft(&x);
            worst = worst.max(max_rel(&fft_radix2(&x)?, &exact));
            if n > 1 {
                let even: Vec<_> = x.iter().step_by(2).cloned().collect();
                let odd: Vec<_> = x.iter().skip(1).step_by(2).cloned().collect();
                let merged = merge_even_odd(&naive_dft(&even), &naive_dft(&odd))?;
                merge = merge.max(max_rel(&merged, &exact));
            }
        }
    }
    Ok(vec![
        Check::new("fft", "radix-2 vs naive DFT, N <= 1024", worst, 1e-10),
        Check::new("fft", "even/odd merge vs naive DFT", merge, 1e-10),
    ])
}

fn ranks_suite() -> Result<Vec<Check>> {
    let f = dft_matrix(256);
    let profile = complementary_rank_profile(f.view(), 8, 1e-6)?;
    let (max, min) = (profile.max_per_level(), profile.min_per_level());
    let spread = max.iter().zip(&min).map(|(a, b)| a - b).max().unwrap_or(0);
    let f64m = dft_matrix(64);
    let b = butterfly_factorize(f64m.view(), 4, 10)?;
    let recon = frob(&(&b.to_dense() - &f64m)) / frob(&f64m);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_vec(&mut rng, 64);
    let dense = b.to_dense().dot(&Array1::from(x.clone())).to_vec();
    let applied = max_rel(&butterfly_apply(&b, &x)?, &dense);
    Ok(vec![
        Check::new(
            "ranks",
            "DFT-256 rank spread per level (eps 1e-6)",
            spread as f64,
            1.0,
        ),
        Check::new("ranks", "DFT-256 middle-level rank", max[4] as f64, 7.0),
        Check::new(
            "ranks",
            "butterfly DFT-64 reconstruction (rank 10)",
            recon,
            1e-5,
        ),
        Check::new("ranks", "butterfly apply vs dense", applied, 1e-10),
    ])
}

fn greens_suite() -> Result<Vec<Check>> {
    let n = 64;
    let med = Medium::homogeneous(Array2::zeros((n, n)), 1.0, -0.5, 0.5)?;
    let omega = 2.0 * PI * 4.0;
    let h = med.spacing();
    let src = [0.5 * h, 0.5 * h];
    let field = solve_pointsource(
        &med,
        omega,
        src,
        FdOrder::Fourth,
        &PmlSpec::default(),
        2,
        16,
    )?;
    let centres = cell_centres(n, -0.5, 0.5);
    let u = field.interior();
    let (mut err, mut norm) = (0.0, 0.0);
    for (i, &x) in centres.iter().enumerate() {
        for (j, &z) in centres.iter().enumerate() {
            let r = ((x - src[0]).powi(2) + (z - src[1]).powi(2)).sqrt();
            if (0.15..0.4).contains(&r) {
                let g = analytic_greens(omega, src, [x, z])?;
                err += (u[[i, j]] - g).norm_sqr();
                norm += g.norm_sqr();
            }
        }
    }
    let mut sim: widebnet::wavesim::SimConfig =
        serde_json::from_str(include_str!("selftest_sim.json"))?;
    sim.frequencies = vec![2.0, 4.0];
    let background = Medium::homogeneous(Array2::zeros((16, 16)), 1.0, -0.5, 0.5)?;
    let data = simulate(&background, &sim)?;
    let zero = data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    Ok(vec![
        Check::new(
            "greens",
            "point source vs analytic Green's function",
            (err / norm).sqrt(),
            0.05,
        ),
        Check::new("greens", "data norm for a homogeneous medium", zero, 1e-10),
    ])
}

fn grads_suite() -> Result<Vec<Check>> {
    let report = grad_check(0)?;
    Ok(report
        .entries
        .iter()
        .map(|e| {
            Check::new(
                "grads",
                format!("{} ({} probes)", e.kind, e.checked),
                e.max_rel_error,
                report.tolerance,
            )
        })
        .collect())
}

fn perms_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for levels in [2usize, 4, 6] {
        let spec = GridSpec::new(levels, 2)?;
        let mut bad = 0usize;
        for level in spec.mid_level()..levels {
            let pi = perm_indices(&spec, level, 3)?;
            let mut seen = vec![false; pi.len()];
            for &i in pi.indices() {
                bad += usize::from(seen[i]);
                seen[i] = true;
            }
            let round = pi.then(&pi.inverse())?;
            bad += usize::from(!round.is_identity());
        }
        let sw = switch_indices(&spec, 3)?;
        bad += usize::from(!sw.then(&sw)?.is_identity());
        let n = spec.side();
        let img = Array2::from_shape_fn((n, n), |(i, j)| i * n + j);
        bad += usize::from(morton_unflatten(&morton_flatten(img.view(), &spec)?, &spec)? != img);
        checks.push(Check::new(
            "perms",
            format!("permutation invariants, L={levels}"),
            bad as f64,
            0.0,
        ));
    }
    Ok(checks)
}

/// Runs the requested oracle suites.
pub fn run(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Fft {
        out.extend(fft_suite()?);
    }
    if all || suite == Suite::Ranks {
        out.extend(ranks_suite()?);
    }
    if all || suite == Suite::Greens {
        out.extend(greens_suite()?);
    }
    if all || suite == Suite::Grads {
        out.extend(grads_suite()?);
    }
    if all || suite == Suite::Perms {
        out.extend(perms_suite()?);
    }
    Ok(out)
}
