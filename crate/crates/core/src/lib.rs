//! End-to-end semantic-communication simulator for vehicle counting.
//!
//! A convolutional encoder turns each traffic frame into a compact density
//! map, a learned codec transmits it over a simulated noisy channel, and a
//! recurrent decoder predicts the vehicle count from the received sequence.
//! Everything is trained jointly with reverse-mode autodiff implemented in
//! this crate.
//!
//! The numeric core is generic over the scalar type via [`Scalar`]
//! (`f32`/`f64`); the [`Real`] alias fixes the project-wide default.

pub mod channel;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Project-wide scalar type. Gradient checks at 1e-4 tolerances need f64.
pub type Real = f64;

/// Tensor over the default scalar.
pub type Tensor = tensor::Tensor<Real>;
/// Autodiff tape over the default scalar.
pub type Graph = graph::Graph<Real>;
/// Parameter store over the default scalar.
pub type ParamStore = graph::ParamStore<Real>;
/// Adam state over the default scalar.
pub type AdamState = optim::AdamState<Real>;
/// Full pipeline over the default scalar.
pub type SemComModel = model::SemComModel<Real>;
/// Trainer over the default scalar.
pub type Trainer = training::Trainer<Real>;
/// Annotated frame over the default scalar.
pub type AnnotatedFrame = data::AnnotatedFrame<Real>;
