//! Coagulation laboratory: exact Marcus–Lushnikov simulation, the discrete
//! Smoluchowski equation, and Gaussian fluctuation predictions for the
//! mean-field coagulation chain with bounded kernels.

// Numerical loops walk several arrays in lockstep; indices read better.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod fluctuation;
pub mod kernel;
pub mod oracle;
pub mod rng;
pub mod simulator;
pub mod smoluchowski;
pub mod state;
pub mod validation;

pub use error::{AnalysisError, ConfigError, EnsembleError, KernelError, OracleError, SolveError, StateError};
pub use kernel::{Kernel, KernelDecl};
pub use simulator::{SimConfig, Simulator, Snapshot, StepOutcome, Strategy, Trajectory};
pub use state::{DensityVector, FluctuationVector, MassHistogram};
