//! UAV coverage path planning and data harvesting on grid maps, learned with
//! a double deep Q-network whose encoder runs a recurrent core (LSTM, GRU or
//! their bidirectional variants) over spatial tokens with attention pooling.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod dynamics;
pub mod env;
pub mod harness;
pub mod missions;
pub mod observation;
pub mod qnet;
pub mod radio;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod world;

pub use scalar::Scalar;

pub type QNetworkF64 = qnet::QNetwork<f64>;
pub type QNetworkF32 = qnet::QNetwork<f32>;
pub type ParamsF64 = qnet::Params<f64>;
pub type ObservationF64 = observation::Observation<f64>;
pub type ObservationF32 = observation::Observation<f32>;
pub type TransitionF64 = trainer::Transition<f64>;
pub type ReplayBufferF64 = trainer::ReplayBuffer<f64>;
