//! Experiment runner: configuration, checkpoints, reports and the
//! `verify | train | eval | calibrate | report` pipelines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("format: {0}")]
    Format(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! run_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}
run_error!(
    clwb_core::backbones::BackboneError,
    clwb_core::oodlab::OodError,
    clwb_core::composer::ComposeError,
    clwb_core::metrics::MetricsError,
    clwb_core::theory::TheoryError,
    clwb_core::numkit::NumError
);

impl From<clwb_core::data::DataError> for CliError {
    fn from(e: clwb_core::data::DataError) -> Self {
        CliError::Format(e.to_string())
    }
}

/// Evaluation thread pool, capped by `CLWB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CLWB_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Usage(format!("CLWB_THREADS={v} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Run(e.to_string()))
}
