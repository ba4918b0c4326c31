//! Quantitative checks: hyperbolicity, the geometric assumptions, invariance
//! of the section measures, and the planar oracle.

pub mod diamond;

pub use diamond::{diamond_step, oracle_start, projection_check, sample_state, DiamondState, DiamondStep, ProjectionReport};
pub mod tangent;

pub use tangent::{Jacobi, TransverseFrame};
pub mod lyapunov;

pub use lyapunov::{lyapunov_spectrum, LyapunovConfig, LyapunovMethod, LyapunovReport};
pub mod expansion;

pub use expansion::{expansion_factor, expansion_profile};
pub mod assumptions;

pub use assumptions::{check_a3, check_a4, check_a6, A3Report, A4Config, A4Report, A6Config, A6Report};
pub mod invariance;

pub use invariance::{energy_test, invariance_samples, measure_invariance_test, pushforward_sample, reference_sample, InvarianceConfig, InvarianceMap, InvarianceReport};
pub mod correlation;

pub use correlation::{autocorrelation, Correlation, CorrelationConfig, CorrelationReport};
