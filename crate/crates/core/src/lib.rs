//! Transfer operators, equivariant data and escape rates for random open interval maps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod bv;
pub mod cones;
pub mod config;
pub mod error;
pub mod harness;
pub mod interval;
pub mod open;
pub mod phase;
pub mod potential;
pub mod rng;
pub mod rpf;
pub mod scenarios;
pub mod scalar;
pub mod sparse;
pub mod special;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GridFunction64 = bv::GridFunction<f64>;
pub type GridFunction32 = bv::GridFunction<f32>;
pub type CellMeasure64 = bv::CellMeasure<f64>;
pub type CellMeasure32 = bv::CellMeasure<f32>;
pub type RandomSystem64 = transfer::RandomSystem<f64>;
pub type RandomSystem32 = transfer::RandomSystem<f32>;
