// SPDX-License-Identifier: Apache-2.0

//! Trainable conditional denoiser `p(x̃_0 | x_k, c)`.

pub mod checkpoint;
pub mod network;
pub mod training;

pub use network::{DenoiserParameters, Dropout, NetworkConfig, TensorSpec};
pub use training::{loss, pixel_loss, train, TrainError, TrainingConfig, TrainingRun};
