//! Robust decision forests grown by island-based competitive coevolution.
//!
//! Every island evolves a population of axis-aligned decision trees against a
//! population of bounded L∞ input perturbations. Islands exchange their best
//! individuals along a migration topology and the final forest is weighted by
//! a mixed Nash equilibrium of the tree-versus-perturbation zero-sum game.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! command-line front end and thread pools live in the `coforest` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod archipelago;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod game;
pub mod island;
pub mod matrix;
pub mod metrics;
pub mod perturbation;
pub mod rng;
pub mod tree;

#[cfg(test)]
mod testutil;

pub use archipelago::{
    ArchipelagoConfig, ArchipelagoResult, EpochExecutor, Sequential, StopReason, Topology, TopologyKind,
};
pub use data::{BootstrapView, Dataset, ScalingRecord};
pub use ensemble::{Composition, CompositionMethod, Forest, ForestMetadata};
pub use error::{Error, Result};
pub use game::{MixedStrategyPair, PayoffMatrix};
pub use island::{HallOfFame, Island, IslandParams};
pub use matrix::Matrix;
pub use metrics::{CartParams, Classifier, MetricKind};
pub use perturbation::Perturbation;
pub use tree::{DecisionTree, LeafRegion, TreeNode};
