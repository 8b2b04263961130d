//! Losses, the seeded minibatch SGD loop and a finite-difference gradient
//! checker shared by every trainable model in the crate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Probability clamp applied inside [`bce`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient at step {step} (epoch {epoch}, loss {loss})")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        loss: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("parameter vector has {got} entries, objective expects {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 10,
            batch_size: 32,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A learning rate of zero and zero epochs are accepted: both return the
    /// initial parameters unchanged.
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "l2 must be a finite non-negative number, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Training loss at the initial parameters, before any update.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochLoss>,
    /// L2 norm of the final parameter vector.
    pub final_param_norm: f64,
    pub steps: usize,
}

impl LossReport {
    /// `epoch,train_loss,val_loss`, one row per epoch. A missing validation
    /// loss is written as an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, val);
        }
        out
    }
}

/// Binary cross-entropy of a single prediction, with `prob` clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)`.
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> Result<f64, TrainError> {
    for v in [p, n] {
        if v.len() != a.len() {
            return Err(TrainError::DimensionMismatch {
                expected: a.len(),
                got: v.len(),
            });
        }
    }
    Ok((squared_distance(a, p) - squared_distance(a, n) + margin).max(0.0))
}

/// A differentiable training objective over a fixed set of indexed examples.
///
/// `loss_and_grad` returns the mean loss over `batch` and writes the gradient
/// of that mean into `grad` (which the caller has zeroed). Objectives must be
/// pure functions of `(params, batch)`; any per-epoch resampling happens in
/// [`Objective::start_epoch`].
pub trait Objective {
    fn n_params(&self) -> usize;
    fn n_examples(&self) -> usize;
    fn loss_and_grad(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;

    fn loss(&self, params: &[f64], batch: &[usize]) -> f64 {
        let mut scratch = vec![0.0; self.n_params()];
        self.loss_and_grad(params, batch, &mut scratch)
    }

    fn start_epoch(&mut self, _epoch: usize, _rng: &mut ChaCha8Rng) {}
}

/// Optional validation loss evaluated after each epoch.
pub type ValLoss<'a> = Option<&'a dyn Fn(&[f64]) -> f64>;

/// Plain minibatch SGD: `theta <- theta - lr * (grad + l2 * theta)`.
///
/// Example order is reshuffled every epoch from a generator seeded with
/// `cfg.seed`; the last partial batch is kept. Train loss is recorded over the
/// full example set after each epoch; `val_loss` is called with the current
/// parameters when provided.
pub fn sgd_run<O: Objective + ?Sized>(
    objective: &mut O,
    params0: Vec<f64>,
    cfg: &TrainConfig,
    val_loss: ValLoss<'_>,
) -> Result<(Vec<f64>, LossReport), TrainError> {
    cfg.validate()?;
    if params0.len() != objective.n_params() {
        return Err(TrainError::ParamCount {
            expected: objective.n_params(),
            got: params0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params0;
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..objective.n_examples()).collect();

    if cfg.epochs > 0 {
        objective.start_epoch(0, &mut rng);
    }
    let initial_train_loss = full_loss(objective, &params);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            objective.start_epoch(epoch, &mut rng);
            if order.len() != objective.n_examples() {
                order = (0..objective.n_examples()).collect();
            }
        }
        order.sort_unstable();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = objective.loss_and_grad(&params, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { step, epoch, loss });
            }
            if cfg.learning_rate != 0.0 {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * (g + cfg.l2 * *p);
                }
            }
            step += 1;
        }
        let train_loss = full_loss(objective, &params);
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                epoch,
                loss: train_loss,
            });
        }
        epochs.push(EpochLoss {
            epoch: epoch + 1,
            train_loss,
            val_loss: val_loss.map(|f| f(&params)),
        });
    }

    let final_param_norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
    Ok((
        params,
        LossReport {
            initial_train_loss,
            epochs,
            final_param_norm,
            steps: step,
        },
    ))
}

fn full_loss<O: Objective + ?Sized>(objective: &O, params: &[f64]) -> f64 {
    let all: Vec<usize> = (0..objective.n_examples()).collect();
    if all.is_empty() {
        return 0.0;
    }
    objective.loss(params, &all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates, sampled with `seed` when the
    /// parameter vector is larger.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the analytic gradient over the full example set against central
/// differences. Relative error is `|ga - gf| / max(1, |ga| + |gf|)`.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &O,
    params: &[f64],
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let batch: Vec<usize> = (0..objective.n_examples()).collect();
    let mut analytic = vec![0.0; params.len()];
    objective.loss_and_grad(params, &batch, &mut analytic);

    let coords: Vec<usize> = if params.len() <= cfg.max_coords {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, params.len(), cfg.max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_coord = None;
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + cfg.step;
        let plus = objective.loss(&probe, &batch);
        probe[i] = orig - cfg.step;
        let minus = objective.loss(&probe, &batch);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let ga = analytic[i];
        let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1.0);
        if rel > max_rel_error || worst_coord.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst_coord = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_coord,
        coords_checked: coords.len(),
        tolerance: cfg.tolerance,
        passed: max_rel_error < cfg.tolerance,
    }
}

/// Seeded uniform draws in `[-scale, scale)`.
pub fn uniform_init(len: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}
