//! Deep Q-learning from console RAM, screens, or both.
//!
//! The crate bundles a small differentiable network engine, RMSprop, a
//! replay memory, deterministic micro-games exposing a 128-byte RAM and a
//! grayscale screen, the five Q-network architectures (`just_ram`,
//! `big_ram`, `nips`, `mixed_ram`, `big_mixed_ram`), and an experiment
//! harness with CSV curves and binary checkpoints.

pub mod agents;
pub mod envs;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod network;
pub mod optim;
pub mod replay;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{
    Activations, Gradients, InputStream, LayerKind, LayerSpec, Mode, NetInputs, Network,
};
pub use tensor::{Activation, Scalar, Tensor};
