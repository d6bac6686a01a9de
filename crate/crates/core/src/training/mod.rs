//! Target assignment, detection loss, SGD with momentum and weight decay,
//! the step learning-rate schedule, the training loop and gradient checks.

mod gradcheck;
mod loss;
mod targets;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gradcheck::{finite_difference_check, gradient_check, GradCheckReport, GRADCHECK_MIN_SAMPLES};
pub use loss::detection_loss;
pub use targets::{assign_targets, SlotTarget, TargetTensor};

use crate::boxes::GroundTruthBox;
use crate::detection::AnchorSet;
use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub initial_lr: f64,
    /// Iteration at which the learning rate drops by `lr_drop_factor`.
    pub lr_drop_iteration: usize,
    pub lr_drop_factor: f64,
    pub total_iterations: usize,
    pub seed: u64,
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
    pub lambda_obj: f64,
    pub lambda_class: f64,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 0.0005,
            initial_lr: 0.001,
            lr_drop_iteration: 20_000,
            lr_drop_factor: 10.0,
            total_iterations: 30_000,
            seed: 0,
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
            lambda_obj: 1.0,
            lambda_class: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let positive = [
            ("initial_lr", self.initial_lr),
            ("lr_drop_factor", self.lr_drop_factor),
            ("lambda_coord", self.lambda_coord),
            ("lambda_noobj", self.lambda_noobj),
            ("lambda_obj", self.lambda_obj),
            ("lambda_class", self.lambda_class),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Learning rate at `iteration`: `initial_lr` before the drop, divided by
/// the drop factor from the drop iteration on.
pub fn lr_schedule(iteration: usize, cfg: &TrainConfig) -> f64 {
    if iteration < cfg.lr_drop_iteration {
        cfg.initial_lr
    } else {
        cfg.initial_lr / cfg.lr_drop_factor
    }
}

/// SGD with momentum; velocities are aligned with [`Network::learnable`].
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &Network<T>) -> Self {
        Sgd {
            velocity: net
                .learnable()
                .iter()
                .map(|t| Tensor::zeros(t.tensor.shape()))
                .collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// `v ← momentum·v − lr·(g + decay·w)`, `w ← w + v`. Batch-norm scale
    /// and shift are not decayed.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
        let mut params = net.learnable_mut();
        if grads.tensors.len() != params.len() || self.velocity.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.tensors.len(),
                params.len()
            )));
        }
        let m = T::from_f64(cfg.momentum);
        let lr_t = T::from_f64(lr);
        for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut self.velocity) {
            if g.shape() != p.tensor.shape() {
                return Err(Error::ShapeMismatch {
                    expected: p.tensor.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            let decay = T::from_f64(if p.kind.decays() { cfg.weight_decay } else { 0.0 });
            let w = p.tensor.data_mut();
            for ((w, &g), v) in w.iter_mut().zip(g.data()).zip(v.data_mut()) {
                *v = m * *v - lr_t * (g + decay * *w);
                *w += *v;
            }
        }
        Ok(())
    }
}

/// A training image at network resolution with its boxes.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// `iteration,lr,loss` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.iteration, e.lr, e.loss);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }
}

/// Endless stream of sample indices: a fresh seeded permutation per epoch.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(len: usize, seed: u64) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// One forward/backward pass over a batch; returns the loss and gradients.
pub fn batch_gradients<T: Scalar>(
    net: &mut Network<T>,
    images: &Tensor<T>,
    targets: &[TargetTensor],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients<T>)> {
    let (out, tape) = net.forward_train(images)?;
    let (loss, grad) = detection_loss(&out, targets, cfg)?;
    let grads = net.backward(&tape, &grad)?;
    Ok((loss, grads))
}

/// Trains `net` in place for `cfg.total_iterations` steps. `checkpoint` is
/// called every `cfg.checkpoint_every` iterations (when non-zero) and after
/// the last one.
pub fn train_loop<T: Scalar>(
    net: &mut Network<T>,
    dataset: &[Sample],
    anchors: &AnchorSet,
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &Network<T>) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let spec = net.spec().clone();
    if anchors.len() != spec.num_anchors {
        return Err(Error::InvalidArgument(format!(
            "{} anchors for a network with {} anchor slots",
            anchors.len(),
            spec.num_anchors
        )));
    }
    let targets = dataset
        .iter()
        .map(|s| assign_targets(&s.boxes, anchors, spec.grid(), spec.num_classes))
        .collect::<Result<Vec<_>>>()?;
    let images: Vec<Tensor<T>> = dataset.iter().map(|s| s.image.cast()).collect();

    let mut sampler = BatchSampler::new(dataset.len(), cfg.seed);
    let mut sgd = Sgd::new(net);
    let mut log = TrainLog::default();
    for iteration in 0..cfg.total_iterations {
        let idx = sampler.next_batch(cfg.batch_size);
        let batch: Vec<Tensor<T>> = idx.iter().map(|&i| images[i].clone()).collect();
        let batch = Tensor::stack(&batch)?;
        let batch_targets: Vec<TargetTensor> = idx.iter().map(|&i| targets[i].clone()).collect();
        let (loss, grads) = batch_gradients(net, &batch, &batch_targets, cfg)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let lr = lr_schedule(iteration, cfg);
        sgd.step(net, &grads, lr, cfg)?;
        log.entries.push(LogEntry { iteration, lr, loss });
        log::debug!("iteration {iteration} lr {lr} loss {loss:.6}");
        let done = iteration + 1;
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if periodic || done == cfg.total_iterations {
            checkpoint(done, net)?;
        }
    }
    Ok(log)
}
