//! Deterministic discrete-event simulator for asynchronous multi-server federated learning.

// NaN must fail validation, so range checks are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod experiment;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod sim;

pub use scalar::{Precision, Scalar};

pub type ModelVectorF32 = model::ModelVector<f32>;
pub type ModelVectorF64 = model::ModelVector<f64>;
pub type TinyModelF32 = model::TinyModel<f32>;
pub type TinyModelF64 = model::TinyModel<f64>;
pub type ServerStateF32 = protocol::ServerState<f32>;
pub type ServerStateF64 = protocol::ServerState<f64>;
pub type WorldF32 = sim::World<f32>;
pub type WorldF64 = sim::World<f64>;
