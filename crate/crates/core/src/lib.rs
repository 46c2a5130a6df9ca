//! Differentially private Wasserstein GAN training.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense feed-forward networks, backpropagation, RMSProp and
//!   weight clipping, generic over [`Scalar`] (`f32` or `f64`).
//! * [`privacy`]: noise calibration, the moments ledger and an empirical
//!   privacy audit.
//! * [`bounds`]: the analytical per-example gradient bound `c_g` and a
//!   sampling harness that checks it.
//! * [`data`]: record matrices, CSV loading and synthetic benchmarks.
//! * [`trainer`]: the private training loop, metric logs and checkpoints.
//! * [`eval`]: Wasserstein curves, nearest neighbours, DWP, DWpre and
//!   downstream classification.
//!
//! ```
//! use dpgan::privacy::{calibrate_sigma, MomentsLedger};
//!
//! let sigma = calibrate_sigma(10.0, 1e-5, 0.01, 5).unwrap();
//! let mut ledger = MomentsLedger::with_default_grid(0.01, sigma).unwrap();
//! for _ in 0..5 {
//!     ledger.record_step();
//! }
//! let eps = ledger.get_epsilon(1e-5).unwrap();
//! assert!((eps - 10.0).abs() < 0.1);
//! ```

pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
pub mod privacy;
mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{DpganError, Result};
pub use scalar::Scalar;

pub use data::{RecordKind, RecordMatrix};
pub use privacy::{calibrate_sigma, MomentsLedger, PrivacyBudget};
pub use tensor::{Activation, GradientSet, NetworkSpec, ParameterSet};
pub use trainer::{train, Checkpoint, DpGan, MetricLog, Objective, TrainConfig};

pub type Records = RecordMatrix<f64>;
pub type Params = ParameterSet<f64>;
pub type Gradients = GradientSet<f64>;
pub type Trainer = DpGan<f64>;
pub type TrainCheckpoint = Checkpoint<f64>;

pub type Records32 = RecordMatrix<f32>;
pub type Params32 = ParameterSet<f32>;
pub type Gradients32 = GradientSet<f32>;
pub type Trainer32 = DpGan<f32>;
pub type TrainCheckpoint32 = Checkpoint<f32>;
