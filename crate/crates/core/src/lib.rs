//! Pool-based active learning for code models.
//!
//! The crate provides acquisition functions (uncertainty, clustering and
//! coverage based), the feature views they operate on, evaluation metrics,
//! distance functions over vectors and token sequences, small built-in
//! models, a simulation loop and the diversity/correlation analysis.
//!
//! ```
//! use alcode::metrics::bleu;
//! assert_eq!(bleu(&[1, 2, 3, 4], &[1, 2, 3, 4], 4).unwrap(), 1.0);
//! ```

pub mod acquisition;
pub mod analysis;
pub mod config;
pub mod distance;
pub mod error;
pub mod features;
pub mod matrix_io;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod pool;
pub mod rng;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
pub use pool::{load_pool, Pool, PoolSchema, TaskKind};
pub use rng::Rng;

/// Version string recorded in run logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
