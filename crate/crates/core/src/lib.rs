//! Class-incremental learning workbench.
//!
//! Class-incremental prediction is decomposed into within-task prediction
//! (WP) and task-id prediction (TP); TP is tied to per-task out-of-distribution
//! detection. The crate provides the entropy identities and bounds behind that
//! decomposition ([`theory`]), two parameter-isolation task-incremental
//! backbones ([`backbones`]), task-membership scorers ([`oodlab`]), the routes
//! that turn per-task heads into a single classifier ([`composer`]), evaluation
//! metrics ([`metrics`]) and dataset handling ([`data`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backbones;
pub mod composer;
pub mod data;
pub mod metrics;
pub mod numkit;
pub mod oodlab;
pub mod theory;

pub use numkit::{seeded_rng, DenseNet, Matrix, Rng};
pub use theory::{Categorical, EntropyReport, GroundTruth, OodProfile, TaskTopology};
