use crate::error::{Error, Result};
use crate::network::{ParamStore, Real};

use super::config::TrainConfig;

/// Adam moments and the plateau schedule that drives the learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    lr: f64,
    initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    plateau: Plateau,
}

#[derive(Clone, Debug, PartialEq)]
struct Plateau {
    factor: f64,
    patience: usize,
    min_lr: f64,
    threshold: f64,
    best: Option<f64>,
    wait: usize,
    seen: usize,
    decays: usize,
}

impl OptimState {
    /// Zero moments shaped like `params`, with the schedule from `config`.
    pub fn new<T: Real>(params: &ParamStore<T>, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len()).map(|i| vec![0.0; params.value(i).len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: config.lr,
            initial_lr: config.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau: Plateau {
                factor: config.decay_factor,
                patience: config.patience,
                min_lr: config.min_lr,
                threshold: config.plateau_threshold,
                best: None,
                wait: 0,
                seen: 0,
                decays: 0,
            },
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn initial_lr(&self) -> f64 {
        self.initial_lr
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of learning-rate reductions so far.
    pub fn decays(&self) -> usize {
        self.plateau.decays
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// cleared afterwards.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, opt: &mut OptimState) -> Result<()> {
    if params.is_empty() {
        return Err(Error::InvalidArgument("adam step on an empty parameter store".into()));
    }
    if params.len() != opt.m.len() || (0..params.len()).any(|i| params.value(i).len() != opt.m[i].len()) {
        return Err(Error::shape("moments shaped like the parameter store", "a different layout"));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for i in 0..params.len() {
        let grad: Vec<f64> = params.grad(i).data().iter().map(|g| g.to_f64()).collect();
        let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
        for (((p, g), m), v) in params.value_mut(i).data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let update = opt.lr * (*m / c1) / ((*v / c2).sqrt() + opt.eps);
            if update != 0.0 {
                *p = T::from_f64(p.to_f64() - update);
            }
        }
    }
    params.zero_grads();
    Ok(())
}

/// Feeds the not yet seen tail of `val_ssim_history` to the plateau rule.
/// Returns whether the learning rate was reduced.
pub fn lr_on_plateau(opt: &mut OptimState, val_ssim_history: &[f64]) -> bool {
    let p = &mut opt.plateau;
    if val_ssim_history.len() < p.seen {
        p.seen = 0;
        p.best = None;
        p.wait = 0;
    }
    let mut reduced = false;
    for &value in &val_ssim_history[p.seen..] {
        match p.best {
            Some(best) if !(value >= best + p.threshold) => p.wait += 1,
            _ => {
                p.best = Some(value);
                p.wait = 0;
            }
        }
        if p.wait >= p.patience {
            p.wait = 0;
            let next = (opt.lr * p.factor).max(p.min_lr);
            if next < opt.lr {
                opt.lr = next;
                p.decays += 1;
                reduced = true;
            }
        }
    }
    p.seen = val_ssim_history.len();
    reduced
}
