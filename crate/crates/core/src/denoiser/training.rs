// SPDX-License-Identifier: Apache-2.0

//! Training objective and optimizer.
//!
//! Per pixel and step `k >= 2` the loss is the KL divergence between the
//! exact posterior `q(x_{k-1} | x_k, x_0)` and the model's marginalized
//! reverse distribution, plus `λ` times the `x_0` cross-entropy. At `k = 1`
//! the cross-entropy is used on its own.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{sigmoid, DenoiserParameters, Dropout, NetworkConfig};
use crate::diffusion::{forward_sample, DiffusionError, NoiseSchedule};
use crate::seed::{derive_seed, derived_stream};
use crate::squish::TopologyMatrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("style {0:?} is not in the class set")]
    UnknownStyle(String),
    #[error("corpus topology is {rows}x{cols}, window is {window}")]
    Shape { rows: usize, cols: usize, window: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_good: Box<DenoiserParameters>,
        history: Vec<f64>,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub clip_norm: f64,
    pub lambda: f64,
    pub dropout: f64,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    /// Call the checkpoint hook every this many iterations; 0 disables it.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 128,
            iterations: 1000,
            clip_norm: 1.0,
            lambda: 1e-3,
            dropout: 0.0,
            schedule: NoiseSchedule::linear(1000, 0.01, 0.5).expect("valid default"),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn xlogy_ratio(q: f64, p: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * (q / p).ln()
    }
}

/// Loss of one pixel and its derivative with respect to the model logit.
pub fn pixel_loss(x0: u8, xk: u8, k: usize, logit: f64, schedule: &NoiseSchedule, lambda: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let ce = if x0 == 1 { softplus(-logit) } else { softplus(logit) };
    let dce = p - f64::from(x0);
    if k == 1 {
        return (ce, dce);
    }
    let a = schedule.posterior_one(xk, 0, k).expect("step checked");
    let b = schedule.posterior_one(xk, 1, k).expect("step checked");
    let q1 = if x0 == 1 { b } else { a };
    let q0 = 1.0 - q1;
    let m1 = (a + p * (b - a)).clamp(f64::MIN_POSITIVE, 1.0);
    let m0 = (1.0 - m1).max(f64::MIN_POSITIVE);
    let kl = xlogy_ratio(q0, m0) + xlogy_ratio(q1, m1);
    let dkl_dp = (b - a) * (q0 / m0 - q1 / m1);
    (kl + lambda * ce, dkl_dp * p * (1.0 - p) + lambda * dce)
}

/// One training example after corruption.
pub struct Example<'a> {
    pub clean: &'a TopologyMatrix,
    pub noisy: TopologyMatrix,
    pub k: usize,
    pub class: usize,
}

impl<'a> Example<'a> {
    pub fn corrupt(
        clean: &'a TopologyMatrix,
        class: usize,
        k: usize,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self, DiffusionError> {
        let noisy = forward_sample(clean, k, schedule, seed)?.cells;
        Ok(Self { clean, noisy, k, class })
    }
}

/// Mean pixel loss over a batch and its exact parameter gradient.
pub fn batch_loss<R: Rng>(
    params: &DenoiserParameters,
    batch: &[Example<'_>],
    schedule: &NoiseSchedule,
    lambda: f64,
    dropout: Option<Dropout<'_, R>>,
) -> (f64, Vec<f64>) {
    let inputs: Vec<&TopologyMatrix> = batch.iter().map(|e| &e.noisy).collect();
    let ks: Vec<usize> = batch.iter().map(|e| e.k).collect();
    let classes: Vec<usize> = batch.iter().map(|e| e.class).collect();
    let (logits, cache) = params.forward_train(&inputs, &ks, &classes, dropout);
    let hw = batch[0].clean.rows() * batch[0].clean.cols();
    let scale = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut dlogits = vec![0.0; logits.len()];
    for (i, ex) in batch.iter().enumerate() {
        let clean = ex.clean.cells();
        let noisy = ex.noisy.cells();
        for j in 0..hw {
            let (l, d) = pixel_loss(clean[j], noisy[j], ex.k, logits[i * hw + j], schedule, lambda);
            total += l;
            dlogits[i * hw + j] = d * scale;
        }
    }
    (total * scale, params.backward(&cache, &dlogits))
}

/// Loss of one clean topology at step `k`, noise drawn from `seed`.
pub fn loss(
    clean: &TopologyMatrix,
    style: &str,
    k: usize,
    params: &DenoiserParameters,
    schedule: &NoiseSchedule,
    lambda: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>), TrainError> {
    let class = params
        .class_index(style)
        .ok_or_else(|| TrainError::UnknownStyle(style.to_string()))?;
    let ex = Example::corrupt(clean, class, k, schedule, seed)?;
    Ok(batch_loss::<rand_chacha::ChaCha8Rng>(params, &[ex], schedule, lambda, None))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

pub struct TrainingRun {
    pub params: DenoiserParameters,
    pub history: Vec<f64>,
}

/// Trains from a zero-head initialization. `corpus` pairs topologies with
/// style ids; `network.steps` is overridden by the schedule length.
pub fn train(
    corpus: &[(TopologyMatrix, String)],
    mut network: NetworkConfig,
    config: &TrainingConfig,
    mut on_checkpoint: impl FnMut(usize, &DenoiserParameters, &[f64]),
) -> Result<TrainingRun, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    network.steps = config.schedule.steps();
    let mut params = DenoiserParameters::init(network, derive_seed(config.seed, "params", 0), true);
    let window = params.config().window;
    let mut classes = Vec::with_capacity(corpus.len());
    for (t, style) in corpus {
        if t.rows() != window || t.cols() != window {
            return Err(TrainError::Shape {
                rows: t.rows(),
                cols: t.cols(),
                window,
            });
        }
        classes.push(params.class_index(style).ok_or_else(|| TrainError::UnknownStyle(style.clone()))?);
    }

    let schedule = &config.schedule;
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(config.iterations);
    let mut last_good = params.clone();
    for it in 0..config.iterations {
        let mut rng = derived_stream(config.seed, "batch", it as u64);
        let mut batch = Vec::with_capacity(config.batch_size);
        for i in 0..config.batch_size {
            let idx = rng.random_range(0..corpus.len());
            let k = rng.random_range(1..=schedule.steps());
            let noise = derive_seed(config.seed, "noise", (it * config.batch_size + i) as u64);
            batch.push(Example::corrupt(&corpus[idx].0, classes[idx], k, schedule, noise)?);
        }
        let mut drop_rng = derived_stream(config.seed, "dropout", it as u64);
        let dropout = Some(Dropout {
            rate: config.dropout,
            rng: &mut drop_rng,
        });
        let (value, mut grad) = batch_loss(&params, &batch, schedule, config.lambda, dropout);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !value.is_finite() || !norm.is_finite() {
            return Err(TrainError::Diverged {
                iteration: it,
                last_good: Box::new(last_good),
                history,
            });
        }
        last_good.data_mut().copy_from_slice(params.data());
        if norm > config.clip_norm {
            let s = config.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(params.data_mut(), &grad, config.learning_rate);
        history.push(value);
        if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
            on_checkpoint(it + 1, &params, &history);
        }
    }
    Ok(TrainingRun { params, history })
}
