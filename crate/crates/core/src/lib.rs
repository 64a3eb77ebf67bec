//! Power allocation for remote MMSE estimation of a correlated Gaussian
//! vector observed through an energy-harvesting amplify-and-forward sensor.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod policies;
pub mod signal;
pub mod solver;
pub mod validate;

pub use error::{Error, Result};
pub use estimator::{ChannelTrace, NoiseModel, PowerAllocation};
pub use policies::{run_policy, Instance, PolicyId, PolicyOptions, PolicyResult};
pub use signal::{CovarianceModel, SpectrumDecomposition};
pub use solver::{EnergyTrace, FeasibleRegion, SolverOptions};
