// SPDX-License-Identifier: Apache-2.0

//! Layout-pattern synthesis on squish topologies.
//!
//! Patterns are factorized into a binary topology and interval geometry
//! ([`squish`]), generated and edited with a conditional binary discrete
//! diffusion model ([`diffusion`], [`denoiser`], [`editing`]), turned back
//! into DRC-clean geometry ([`legalize`], [`drc`]) and scored as a library
//! ([`metrics`]). [`corpus`] provides a synthetic two-style training set.

pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod drc;
pub mod editing;
pub mod legalize;
pub mod metrics;
pub mod seed;
pub mod squish;

pub use diffusion::{Denoiser, NoiseSchedule, NoisyTopology, StyleCondition};
pub use drc::{check, Axis, CellBox, DesignRules, Violation, ViolationKind, ViolationReport};
pub use legalize::{legalize, PhysicalExtent};
pub use squish::{decode, encode, normalize, GeometryVectors, LayoutPattern, Polygon, TopologyMatrix};
