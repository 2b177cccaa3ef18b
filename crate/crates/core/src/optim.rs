//! Adam with global gradient-norm clipping and best-so-far selection.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled to at most this Euclidean norm before each update.
    pub clip_norm: f64,
    pub max_iterations: usize,
    /// Stop when the best loss improved by less than this fraction over
    /// the last `window` iterations.
    pub tolerance: f64,
    pub window: usize,
    /// Learning rate decays geometrically to `learning_rate * final_lr_fraction`
    /// at `max_iterations`. 1.0 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            max_iterations: 2000,
            tolerance: 1e-8,
            window: 20,
            final_lr_fraction: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.clip_norm > 0.0
            && self.max_iterations >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.tolerance >= 0.0
            && self.window >= 1
            && self.final_lr_fraction > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid optimizer config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Converged,
    /// The loss became non-finite at this iteration; the best finite
    /// iterate is returned.
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct AdamOutcome {
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Loss of the iterate evaluated at each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Minimizes `objective`, which returns the loss and its gradient.
/// `project` is applied after every update (e.g. to wrap angles).
pub fn minimize<F, P>(x0: &[f64], cfg: &AdamConfig, mut objective: F, project: P) -> Result<AdamOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&mut [f64]),
{
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_history: Vec<f64> = Vec::with_capacity(cfg.max_iterations);
    let mut history = Vec::with_capacity(cfg.max_iterations);
    let decay = cfg.final_lr_fraction.powf(1.0 / cfg.max_iterations as f64);
    let mut lr = cfg.learning_rate;
    let mut termination = Termination::MaxIterations;

    for it in 0..cfg.max_iterations {
        let (loss, mut grad) = objective(&x)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            if it == 0 {
                return Err(Error::NonFiniteLoss { iteration: 0 });
            }
            termination = Termination::NonFinite { iteration: it };
            break;
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&x);
        }
        best_history.push(best_loss);
        if it >= cfg.window {
            let past = best_history[it - cfg.window];
            let rel = (past - best_loss) / past.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.tolerance {
                termination = Termination::Converged;
                break;
            }
        }

        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let t = (it + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            x[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
        project(&mut x);
        lr *= decay;
    }

    Ok(AdamOutcome {
        best,
        best_loss,
        iterations: history.len(),
        history,
        termination,
    })
}

/// Central finite-difference gradient.
pub fn finite_difference<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + step;
        let fp = f(&xp)?;
        xp[i] = orig - step;
        let fm = f(&xp)?;
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
