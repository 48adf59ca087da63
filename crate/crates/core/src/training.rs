//! Meta-optimization across drivers, pooled training, and per-driver
//! fine-tuning.

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Real};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedDriver};

/// A differentiable training loss over batches.
pub trait Objective: Sync {
    type Batch: Sync;

    /// Loss and gradient at `params`, evaluated in `T` arithmetic.
    fn loss_grad<T: Real>(&self, params: &[T], batch: &Self::Batch) -> (T, Vec<T>);

    fn loss(&self, params: &[f64], batch: &Self::Batch) -> f64 {
        self.loss_grad(params, batch).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner learning rate η.
    pub inner_lr: f64,
    /// Outer learning rate γ (also the pooled-training rate).
    pub outer_lr: f64,
    /// Fine-tuning learning rate ω.
    pub finetune_lr: f64,
    pub epochs: usize,
    /// L2 penalty added to the outer gradient.
    pub l2: f64,
    pub second_order: bool,
    pub inner_steps: usize,
    /// Drivers per outer update; 0 uses all drivers.
    pub meta_batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub finetune_max_steps: usize,
    pub finetune_patience: usize,
    pub finetune_check_every: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self::ved()
    }
}

impl MetaConfig {
    pub fn ved() -> Self {
        Self {
            inner_lr: 6e-4,
            outer_lr: 6e-3,
            finetune_lr: 6e-4,
            epochs: 100,
            l2: 1e-5,
            second_order: true,
            inner_steps: 1,
            meta_batch_size: 0,
            patience: 5,
            finetune_max_steps: 200,
            finetune_patience: 3,
            finetune_check_every: 1,
            seed: 0,
        }
    }

    pub fn ettd() -> Self {
        Self { inner_lr: 3e-4, outer_lr: 3e-3, finetune_lr: 1e-4, ..Self::ved() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0 && self.outer_lr > 0.0 && self.finetune_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam with L2 penalty added to the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i] + self.weight_decay * theta[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `steps` plain gradient-descent steps `θ ← θ - η ∇ℒ(θ)` on `support`.
pub fn inner_adapt<O: Objective>(obj: &O, theta: &[f64], support: &O::Batch, eta: f64, steps: usize) -> Vec<f64> {
    let mut t = theta.to_vec();
    for _ in 0..steps {
        let (_, g) = obj.loss_grad(&t, support);
        for (x, gi) in t.iter_mut().zip(&g) {
            *x -= eta * gi;
        }
    }
    t
}

/// Hessian-vector product `∇²ℒ(θ) v`, exact (forward-over-reverse).
pub fn hessian_vector<O: Objective>(obj: &O, theta: &[f64], batch: &O::Batch, v: &[f64]) -> Vec<f64> {
    let dual: Vec<Dual> = theta.iter().zip(v).map(|(&re, &eps)| Dual { re, eps }).collect();
    obj.loss_grad(&dual, batch).1.into_iter().map(|g| g.eps).collect()
}

/// Query loss after adaptation and the gradient of that loss with respect
/// to the initial parameters. With `second_order` the gradient flows
/// through every inner step: `g ← g - η H_s(θ_k) g`.
pub fn meta_gradient<O: Objective>(
    obj: &O,
    theta: &[f64],
    support: &O::Batch,
    query: &O::Batch,
    eta: f64,
    steps: usize,
    second_order: bool,
) -> (f64, Vec<f64>) {
    let mut path = vec![theta.to_vec()];
    for _ in 0..steps {
        let next = inner_adapt(obj, path.last().expect("path is non-empty"), support, eta, 1);
        path.push(next);
    }
    let (loss, mut g) = obj.loss_grad(path.last().expect("path is non-empty"), query);
    if second_order {
        for k in (0..steps).rev() {
            let hv = hessian_vector(obj, &path[k], support, &g);
            for (gi, h) in g.iter_mut().zip(&hv) {
                *gi -= eta * h;
            }
        }
    }
    (loss, g)
}

/// One driver's support and query batches.
pub struct MetaTask<B> {
    pub name: String,
    pub support: B,
    pub query: B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub log: Vec<EpochLog>,
}

fn mean_loss<O: Objective>(obj: &O, theta: &[f64], batches: &[O::Batch]) -> Option<f64> {
    if batches.is_empty() {
        return None;
    }
    let losses: Vec<f64> = batches.par_iter().map(|b| obj.loss(theta, b)).collect();
    Some(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = if size == 0 { n.max(1) } else { size };
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Sums per-item gradients computed in parallel, reducing in item order.
fn ordered_sum(len: usize, parts: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    let mut total = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
    }
    (loss, total)
}

/// Shared epoch loop with Adam outer updates and validation early stopping.
fn optimize<O, F>(obj: &O, theta0: &[f64], n_items: usize, val: &[O::Batch], cfg: &MetaConfig, grad: F) -> TrainOutcome
where
    O: Objective,
    F: Fn(&[f64], usize) -> (f64, Vec<f64>) + Sync,
{
    let mut theta = theta0.to_vec();
    let mut adam = Adam::new(theta.len(), cfg.outer_lr, cfg.l2);
    let mut best = (mean_loss(obj, &theta, val), theta.clone(), 0usize);
    let mut since_best = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        for range in chunks(n_items, cfg.meta_batch_size) {
            let parts: Vec<(f64, Vec<f64>)> = range.into_par_iter().map(|i| grad(&theta, i)).collect();
            let (loss, g) = ordered_sum(theta.len(), parts);
            epoch_loss += loss;
            adam.step(&mut theta, &g);
        }
        let train_loss = epoch_loss / n_items.max(1) as f64;
        let val_loss = mean_loss(obj, &theta, val);
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        log.push(EpochLog { epoch, train_loss, val_loss });
        match (val_loss, best.0) {
            (Some(v), Some(b)) if v < b => {
                best = (Some(v), theta.clone(), epoch);
                since_best = 0;
            }
            (Some(_), _) => {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    info!("early stop after epoch {epoch}");
                    break;
                }
            }
            (None, _) => best = (None, theta.clone(), epoch),
        }
    }
    TrainOutcome { theta: best.1, best_epoch: best.2, best_val: best.0, log }
}

/// Meta-trains from `theta0`. Each outer step sums the meta-gradients of a
/// group of tasks (all tasks by default) in task order; parameters with the
/// lowest validation loss are returned.
pub fn meta_train<O: Objective>(
    obj: &O,
    theta0: &[f64],
    tasks: &[MetaTask<O::Batch>],
    val: &[O::Batch],
    cfg: &MetaConfig,
) -> TrainOutcome {
    optimize(obj, theta0, tasks.len(), val, cfg, |theta, i| {
        let t = &tasks[i];
        meta_gradient(obj, theta, &t.support, &t.query, cfg.inner_lr, cfg.inner_steps, cfg.second_order)
    })
}

/// Ordinary training at the outer rate. Each batch's mean loss is scaled
/// by its weight; weights proportional to batch size make the objective
/// the mean over all pooled examples.
pub fn pooled_train<O: Objective>(
    obj: &O,
    theta0: &[f64],
    batches: &[O::Batch],
    weights: &[f64],
    val: &[O::Batch],
    cfg: &MetaConfig,
) -> TrainOutcome {
    assert_eq!(batches.len(), weights.len(), "one weight per batch");
    optimize(obj, theta0, batches.len(), val, cfg, |theta, i| {
        let (loss, mut g) = obj.loss_grad(theta, &batches[i]);
        g.iter_mut().for_each(|v| *v *= weights[i]);
        (loss * weights[i], g)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneOutcome {
    pub theta: Vec<f64>,
    pub steps: usize,
    /// True when there was no training data and the input was returned.
    pub untouched: bool,
}

/// Adam steps at `lr` on `train`, checked every `cfg.finetune_check_every`
/// steps against `val` (or the training loss when `val` is `None`); stops
/// after `cfg.finetune_patience` checks without improvement or `max_steps`
/// steps and returns the best parameters. `theta_global` is not modified.
pub fn fine_tune<O: Objective>(
    obj: &O,
    theta_global: &[f64],
    train: Option<&O::Batch>,
    val: Option<&O::Batch>,
    lr: f64,
    max_steps: usize,
    cfg: &MetaConfig,
) -> FineTuneOutcome {
    let Some(train) = train else {
        return FineTuneOutcome { theta: theta_global.to_vec(), steps: 0, untouched: true };
    };
    let mut theta = theta_global.to_vec();
    if lr == 0.0 || max_steps == 0 {
        return FineTuneOutcome { theta, steps: 0, untouched: false };
    }
    let monitor = val.unwrap_or(train);
    let check_every = cfg.finetune_check_every.max(1);
    let mut adam = Adam::new(theta.len(), lr, cfg.l2);
    let mut best = (obj.loss(&theta, monitor), theta.clone(), 0usize);
    let mut bad_checks = 0usize;
    for step in 1..=max_steps {
        let (_, g) = obj.loss_grad(&theta, train);
        adam.step(&mut theta, &g);
        if step % check_every == 0 || step == max_steps {
            let l = obj.loss(&theta, monitor);
            if l < best.0 {
                best = (l, theta.clone(), step);
                bad_checks = 0;
            } else {
                bad_checks += 1;
                if bad_checks >= cfg.finetune_patience.max(1) {
                    break;
                }
            }
        }
    }
    FineTuneOutcome { theta: best.1, steps: best.2, untouched: false }
}

/// The model's training loss over trips of one prepared driver.
pub struct ModelObjective<'a> {
    pub model: &'a Model,
    pub drivers: &'a [PreparedDriver],
}

/// Target trips (indices into the driver's trip list) of one driver.
#[derive(Debug, Clone, PartialEq)]
pub struct TripBatch {
    pub driver: usize,
    pub targets: Vec<usize>,
}

impl Objective for ModelObjective<'_> {
    type Batch = TripBatch;

    fn loss_grad<T: Real>(&self, params: &[T], batch: &TripBatch) -> (T, Vec<T>) {
        self.model.loss_grad(params, &self.drivers[batch.driver], &batch.targets)
    }

    fn loss(&self, params: &[f64], batch: &TripBatch) -> f64 {
        self.model.batch_loss(params, &self.drivers[batch.driver], &batch.targets)
    }
}

fn labeled(driver: &PreparedDriver, idx: &[usize]) -> Vec<usize> {
    idx.iter().copied().filter(|&i| driver.is_labeled(i)).collect()
}

/// Meta tasks from each driver's support and query splits; drivers with an
/// empty support or query are skipped.
pub fn meta_tasks(drivers: &[PreparedDriver]) -> Vec<MetaTask<TripBatch>> {
    let mut tasks = Vec::new();
    for (u, d) in drivers.iter().enumerate() {
        let support = labeled(d, &d.splits.support);
        let query = labeled(d, &d.splits.query);
        if support.is_empty() || query.is_empty() {
            warn!("driver {} skipped for meta-training: empty support or query", d.driver_id);
            continue;
        }
        tasks.push(MetaTask {
            name: d.driver_id.clone(),
            support: TripBatch { driver: u, targets: support },
            query: TripBatch { driver: u, targets: query },
        });
    }
    tasks
}

/// One batch per driver over the given split, skipping empty ones.
pub fn split_batches(drivers: &[PreparedDriver], pick: impl Fn(&PreparedDriver) -> &[usize]) -> Vec<TripBatch> {
    drivers
        .iter()
        .enumerate()
        .filter_map(|(u, d)| {
            let targets = labeled(d, pick(d));
            (!targets.is_empty()).then_some(TripBatch { driver: u, targets })
        })
        .collect()
}
