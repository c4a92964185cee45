//! Deterministic simulation engine for building multimodal face-forgery
//! datasets with agent creators, an adaptive rejection gate and simulated
//! social interaction.

pub mod actions;
pub mod ars;
pub mod backends;
pub mod cli;
pub mod manifest;
pub mod memory;
pub mod pipeline;
pub mod profile;
pub mod rational;
pub mod rng;
pub mod social;
