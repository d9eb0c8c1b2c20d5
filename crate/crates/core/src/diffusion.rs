// SPDX-License-Identifier: Apache-2.0

//! Binary discrete diffusion: linear flip schedule, forward corruption,
//! exact two-state posterior and conditional reverse sampling.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, derived_stream};
use crate::squish::TopologyMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("step {k} out of range 1..={max}")]
    Step { k: usize, max: usize },
    #[error("denoiser returned {value} at index {index}, expected a probability")]
    BadProbability { index: usize, value: f64 },
    #[error("denoiser returned {got} values for {expected} pixels")]
    OutputLength { got: usize, expected: usize },
    #[error("denoiser: {0}")]
    Denoiser(String),
}

/// 2×2 transition matrix over {0, 1}, stored by its off-diagonal. Every
/// product of symmetric doubly stochastic 2×2 matrices stays in this family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flip(pub f64);

impl Flip {
    pub fn matrix(self) -> [[f64; 2]; 2] {
        [[1.0 - self.0, self.0], [self.0, 1.0 - self.0]]
    }

    /// `P(to | from)`.
    pub fn p(self, from: u8, to: u8) -> f64 {
        if from == to {
            1.0 - self.0
        } else {
            self.0
        }
    }

    pub fn then(self, next: Flip) -> Flip {
        let a = self.0;
        let b = next.0;
        Flip(a * (1.0 - b) + (1.0 - a) * b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct NoiseSchedule {
    k: usize,
    beta1: f64,
    beta_k: f64,
    beta: Vec<f64>,
    cumulative: Vec<Flip>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    #[serde(rename = "K")]
    k: usize,
    beta1: f64,
    #[serde(rename = "betaK")]
    beta_k: f64,
}

impl TryFrom<ScheduleFile> for NoiseSchedule {
    type Error = DiffusionError;
    fn try_from(f: ScheduleFile) -> Result<Self, Self::Error> {
        NoiseSchedule::linear(f.k, f.beta1, f.beta_k)
    }
}

impl From<NoiseSchedule> for ScheduleFile {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleFile {
            k: s.k,
            beta1: s.beta1,
            beta_k: s.beta_k,
        }
    }
}

impl NoiseSchedule {
    /// Linear schedule from `beta1` to `beta_k`. `k = 1` is accepted only
    /// for a constant schedule, where the interpolation is well defined.
    pub fn linear(k: usize, beta1: f64, beta_k: f64) -> Result<Self, DiffusionError> {
        if !(beta1 > 0.0 && beta1 <= beta_k && beta_k <= 0.5) {
            return Err(DiffusionError::Schedule(format!(
                "need 0 < beta1 <= betaK <= 0.5, got {beta1}, {beta_k}"
            )));
        }
        if k == 0 || (k == 1 && beta1 != beta_k) {
            return Err(DiffusionError::Schedule(format!("K = {k} is too small")));
        }
        let beta: Vec<f64> = (1..=k)
            .map(|i| {
                if k == 1 {
                    beta1
                } else {
                    (i - 1) as f64 * (beta_k - beta1) / (k - 1) as f64 + beta1
                }
            })
            .collect();
        let mut cumulative = Vec::with_capacity(k);
        let mut acc = Flip(0.0);
        for &b in &beta {
            acc = acc.then(Flip(b));
            cumulative.push(acc);
        }
        Ok(Self {
            k,
            beta1,
            beta_k,
            beta,
            cumulative,
        })
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// Single-step transition `Q_k`.
    pub fn step_flip(&self, k: usize) -> Flip {
        Flip(self.beta[k - 1])
    }

    /// Cumulative transition `Q̄_k`; `k = 0` is the identity.
    pub fn cumulative(&self, k: usize) -> Flip {
        if k == 0 {
            Flip(0.0)
        } else {
            self.cumulative[k - 1]
        }
    }

    fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.k {
            Err(DiffusionError::Step { k, max: self.k })
        } else {
            Ok(())
        }
    }

    /// Exact `P(x_{k-1} = 1 | x_k, x_0)`. At `k = 1` this is the delta at `x_0`.
    pub fn posterior_one(&self, xk: u8, x0: u8, k: usize) -> Result<f64, DiffusionError> {
        self.check_step(k)?;
        if k == 1 {
            return Ok(f64::from(x0));
        }
        let step = self.step_flip(k);
        let prev = self.cumulative(k - 1);
        let w0 = step.p(0, xk) * prev.p(x0, 0);
        let w1 = step.p(1, xk) * prev.p(x0, 1);
        Ok(w1 / (w0 + w1))
    }

    /// Posterior as `[P(0), P(1)]`.
    pub fn true_posterior(&self, xk: u8, x0: u8, k: usize) -> Result<[f64; 2], DiffusionError> {
        let p1 = self.posterior_one(xk, x0, k)?;
        Ok([1.0 - p1, p1])
    }

    /// Reverse-step probability of `x_{k-1} = 1` given the model's `p(x̃_0 = 1)`.
    pub fn reverse_one(&self, xk: u8, p_x0: f64, k: usize) -> Result<f64, DiffusionError> {
        if k == 1 {
            return Ok(p_x0);
        }
        let a = self.posterior_one(xk, 0, k)?;
        let b = self.posterior_one(xk, 1, k)?;
        Ok((1.0 - p_x0) * a + p_x0 * b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisyTopology {
    pub cells: TopologyMatrix,
    pub step: usize,
}

pub const STYLES: [&str; 2] = ["A", "B"];

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StyleCondition {
    pub style: String,
    /// Reserved for rule or material tags; ignored by the built-in denoiser.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl StyleCondition {
    pub fn new(style: &str) -> Self {
        Self {
            style: style.to_string(),
            attributes: BTreeMap::new(),
        }
    }
}

/// Per-pixel `p(x̃_0 = 1 | x_k, c)`. Implementations must be pure functions
/// of their inputs so sampling replays exactly.
pub trait Denoiser: Sync {
    /// Row-major probabilities, one per cell of each input.
    fn predict_x0(
        &self,
        inputs: &[&TopologyMatrix],
        k: usize,
        condition: &StyleCondition,
    ) -> Result<Vec<Vec<f64>>, DiffusionError>;
}

fn flat(t: &TopologyMatrix) -> impl Iterator<Item = u8> + '_ {
    (0..t.rows()).flat_map(move |r| (0..t.cols()).map(move |c| t.get(r, c)))
}

fn from_flat(rows: usize, cols: usize, bits: &[u8]) -> TopologyMatrix {
    TopologyMatrix::from_cells(rows, cols, bits.to_vec()).expect("shape preserved")
}

/// Samples `x_k ~ q(x_k | x_0)`.
pub fn forward_sample(
    clean: &TopologyMatrix,
    k: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<NoisyTopology, DiffusionError> {
    schedule.check_step(k)?;
    let flip = schedule.cumulative(k).0;
    let mut rng = derived_stream(seed, "forward", k as u64);
    let bits: Vec<u8> = flat(clean)
        .map(|x| if rng.random::<f64>() < flip { 1 - x } else { x })
        .collect();
    Ok(NoisyTopology {
        cells: from_flat(clean.rows(), clean.cols(), &bits),
        step: k,
    })
}

fn validate_probs(p: &[f64], expected: usize) -> Result<(), DiffusionError> {
    if p.len() != expected {
        return Err(DiffusionError::OutputLength {
            got: p.len(),
            expected,
        });
    }
    for (index, &value) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(DiffusionError::BadProbability { index, value });
        }
    }
    Ok(())
}

/// Samples from a per-pixel Bernoulli map given the current state and model output.
pub(crate) fn step_from_probs(
    noisy: &TopologyMatrix,
    p_x0: &[f64],
    k: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<TopologyMatrix, DiffusionError> {
    validate_probs(p_x0, noisy.rows() * noisy.cols())?;
    // four possible posteriors, computed once
    let post = [
        [schedule.posterior_one(0, 0, k)?, schedule.posterior_one(0, 1, k)?],
        [schedule.posterior_one(1, 0, k)?, schedule.posterior_one(1, 1, k)?],
    ];
    let mut rng = derived_stream(seed, "reverse", k as u64);
    let bits: Vec<u8> = flat(noisy)
        .zip(p_x0)
        .map(|(xk, &p)| {
            let p1 = if k == 1 {
                p
            } else {
                let [a, b] = post[xk as usize];
                (1.0 - p) * a + p * b
            };
            u8::from(rng.random::<f64>() < p1)
        })
        .collect();
    Ok(from_flat(noisy.rows(), noisy.cols(), &bits))
}

/// One conditional reverse step `x_k → x_{k-1}`.
pub fn reverse_step(
    noisy: &NoisyTopology,
    condition: &StyleCondition,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<NoisyTopology, DiffusionError> {
    let k = noisy.step;
    schedule.check_step(k)?;
    let mut p = denoiser.predict_x0(&[&noisy.cells], k, condition)?;
    let p = p.pop().ok_or(DiffusionError::OutputLength {
        got: 0,
        expected: 1,
    })?;
    Ok(NoisyTopology {
        cells: step_from_probs(&noisy.cells, &p, k, schedule, seed)?,
        step: k - 1,
    })
}

/// Uniform noise `T_K`.
pub fn uniform_noise(rows: usize, cols: usize, seed: u64) -> TopologyMatrix {
    let mut rng = derived_stream(seed, "init", 0);
    let bits: Vec<u8> = (0..rows * cols).map(|_| u8::from(rng.random::<bool>())).collect();
    from_flat(rows, cols, &bits)
}

/// Draws `T_0` from uniform noise through all `K` reverse steps.
pub fn sample(
    rows: usize,
    cols: usize,
    condition: &StyleCondition,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<TopologyMatrix, DiffusionError> {
    let seeds = [seed];
    Ok(sample_batch(rows, cols, condition, denoiser, schedule, &seeds)?
        .pop()
        .expect("one sample"))
}

/// Samples one topology per seed, sharing denoiser calls across the batch.
/// Each output depends only on its own seed.
pub fn sample_batch(
    rows: usize,
    cols: usize,
    condition: &StyleCondition,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    seeds: &[u64],
) -> Result<Vec<TopologyMatrix>, DiffusionError> {
    let mut states: Vec<TopologyMatrix> = seeds.iter().map(|&s| uniform_noise(rows, cols, s)).collect();
    for k in (1..=schedule.steps()).rev() {
        let inputs: Vec<&TopologyMatrix> = states.iter().collect();
        let probs = denoiser.predict_x0(&inputs, k, condition)?;
        if probs.len() != states.len() {
            return Err(DiffusionError::OutputLength {
                got: probs.len(),
                expected: states.len(),
            });
        }
        states = states
            .iter()
            .zip(&probs)
            .zip(seeds)
            .map(|((s, p), &seed)| step_from_probs(s, p, k, schedule, seed))
            .collect::<Result<_, _>>()?;
    }
    Ok(states)
}

/// Seed for item `index` of a batch drawn under `root`.
pub fn item_seed(root: u64, index: u64) -> u64 {
    derive_seed(root, "item", index)
}
