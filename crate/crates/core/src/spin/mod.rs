//! Brute-force finite-J reference engine for the collective spin model.

pub mod evolve;
pub mod operators;
pub mod report;
pub mod tau;
pub mod ultimate;

pub use evolve::{
    evolve_conditional, evolve_unconditional, trace_distance, variance_jz, ConditionalTrajectory, DensityLikeMatrix,
    Drive, EvolveOptions, MatrixRole,
};
pub use operators::{SpinCoherentState, SpinOperators, C64, DEFAULT_DIMENSION_CAP};
pub use report::{write_oracle_csv, OracleRow};
pub use tau::{fisher_tau, qfi_sld, tau_ensemble, Estimate, TauEnsemble};
pub use ultimate::{ultimate_qfi_finite_j, UltimateQfiEstimate};
