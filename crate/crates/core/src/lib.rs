//! Identification of anisotropic conduction-velocity tensor fields on
//! triangulated surfaces from several sparse activation-time maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`], [`sampling`] and [`io`] hold the surface representation,
//!   sampling designs and file formats.
//! * [`basis`] builds a smooth tangent frame with the vector heat method.
//! * [`eikonal`] is the forward anisotropic eikonal solver (fast iterative
//!   method) together with closed-form oracles for constant tensors.
//! * [`conductivity`] maps `(a, e1, e2)` fiber parameters to tensors.
//! * [`nn`] is a small dense network with exact input gradients and
//!   parameter gradients of losses built from them.
//! * [`trainer`] fits one activation network per map plus a single
//!   conductivity network under an eikonal penalty with Huber total variation.
//! * [`estimators`] holds the data-driven baseline, metrics and noise.
//! * [`experiment`] wires everything into reproducible pipelines.
//!
//! With the default `parallel` feature, batch loops run on rayon; without it
//! the same code paths run sequentially and produce identical results.

// Checks such as `!(x > 0.0)` are written negated on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod conductivity;
pub mod eikonal;
pub mod estimators;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod mesh;
pub mod nn;
pub mod sampling;
pub mod sparse;
pub mod trainer;

pub use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Three-component double precision vector used throughout the crate.
pub type Vec3 = Vector3<f64>;
