//! Decentralized adaptive optimization with periodic and compressed
//! communication.
//!
//! Workers run Adam-style local steps on private objectives and mix their
//! iterates with neighbors over a doubly stochastic gossip matrix, either
//! every `p` iterations in full precision (`d_adam`) or with compressed
//! differences against tracked replicas (`cd_adam`).

pub mod analysis;
pub mod compression;
pub mod engine;
pub mod harness;
pub mod optimizer;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod topology;
mod vecops;

pub use compression::{CompressorKind, CompressorSpec};
pub use engine::{Algorithm, GammaSetting, RunConfig, RunTrace, Simulation, TopologySpec};
pub use optimizer::{AdamHyper, Numerator};
pub use problems::{NoiseKind, Problem, ProblemKind, ProblemSpec};
pub use topology::{Topology, TopologyKind, WeightRule};
