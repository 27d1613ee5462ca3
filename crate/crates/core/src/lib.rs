//! Locally-symplectic volume-preserving neural networks for learning flow
//! maps of divergence-free dynamical systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkit`]: small dense linear algebra, `expm`, finite differences, RNG.
//! * [`systems`]: advection, free rigid body and charged-particle dynamics.
//! * [`data`]: reference integration and one-step datasets.
//! * [`nets`]: LocSympNet, SymLocSympNet and the coupling baseline.
//! * [`training`]: loss, exact gradients, Adam, the epoch loop.
//! * [`metrics`]: rollouts, error series, stability and linear oracles.
//! * [`verify`]: structural self-checks shared by the CLI.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod numkit;
pub mod systems;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
