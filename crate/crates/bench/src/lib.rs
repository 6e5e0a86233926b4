//! Criterion benchmarks for the hot kernels: dense forward/backward, HAT and Sup
//! training steps, AUC, ODIN scoring and the bound suites.
//!
//! Run with `cargo bench -p clwb-bench`.
