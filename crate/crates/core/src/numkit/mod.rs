//! Deterministic dense-network substrate: layers, reverse-mode gradients,
//! SGD and a finite-difference gradient checker.

mod gradcheck;
mod loss;
mod matrix;
mod net;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use loss::{
    argmax, clamped_ln, l2_normalize, l2_normalize_backward, log_sigmoid, log_sum_exp, sigmoid,
    softmax, softmax_cross_entropy, softmax_with_temperature, LOG_CLAMP,
};
pub use matrix::Matrix;
pub use net::{Activation, Dense, DenseNet, ForwardCache, GradTape};

use rand::SeedableRng;

/// The crate-wide PRNG (SplitMix64).
pub type Rng = rand_xoshiro::SplitMix64;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, stream)`; used so sub-components draw from disjoint sequences.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape { what: &'static str, expected: usize, actual: usize },
    #[error("non-finite value in {context} {index}")]
    NonFinite { context: &'static str, index: usize },
    #[error("hook value outside [0,1] at layer {layer}, unit {index}")]
    HookRange { layer: usize, index: usize },
    #[error("backward called without a matching forward cache")]
    MissingCache,
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
}
