use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensornet::{Parameters, Real};

/// Exponentially decayed learning rate, optionally staircased.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub interval: u64,
    pub staircase: bool,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 5e-3,
            decay: 0.95,
            interval: 2000,
            staircase: true,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        let t = if self.staircase {
            (step / self.interval.max(1)) as f64
        } else {
            step as f64 / self.interval.max(1) as f64
        };
        self.base * self.decay.powf(t)
    }
}

/// `rate = 5e-3 · 0.95^⌊step/2000⌋`.
pub fn lr_schedule(step: u64) -> f64 {
    LrSchedule::default().rate(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: LrSchedule::default(),
        }
    }
}

/// Adam moments, one pair per parameter array in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<ArrayD<T>>,
    pub second: Vec<ArrayD<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<P: Parameters<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<ArrayD<T>> = params
            .to_arrays()
            .iter()
            .map(|a| ArrayD::zeros(a.raw_dim()))
            .collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.schedule.rate(self.step)
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step<T: Real, P: Parameters<T>>(
    state: &mut OptimizerState<T>,
    params: &mut P,
    grads: &P,
) -> Result<()> {
    let mut grad_arrays = Vec::new();
    let mut bad = None;
    grads.visit(&mut |name, g| {
        if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
        grad_arrays.push(g);
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    ensure!(
        grad_arrays.len() == state.first.len(),
        "optimizer holds {} moment arrays, gradients have {}",
        state.first.len(),
        grad_arrays.len()
    );
    let c = state.config;
    let lr = c.schedule.rate(state.step);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let cast = |v: f64| T::from_f64(v).expect("finite constant");
    let (b1, b2) = (cast(c.beta1), cast(c.beta2));
    let (one_b1, one_b2) = (cast(1.0 - c.beta1), cast(1.0 - c.beta2));
    let step_size = cast(lr / bc1);
    let sqrt_bc2 = cast(bc2.sqrt());
    let eps = cast(c.eps);
    let mut i = 0;
    let mut shape_err = None;
    params.visit_mut(&mut |name, mut p| {
        let g = &grad_arrays[i];
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        i += 1;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            shape_err.get_or_insert(name.to_string());
            return;
        }
        ndarray::Zip::from(&mut p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v).sqrt() / sqrt_bc2 + eps);
            });
    });
    if let Some(name) = shape_err {
        return Err(Error::Domain(format!("gradient shape mismatch for {name}")));
    }
    state.step += 1;
    Ok(())
}
