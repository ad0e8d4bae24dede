//! Steady-state detection over adaptive diffusion networks: combination
//! matrices and steady-state weight kernels, everywhere-finite LMGF models,
//! refined small-step tail asymptotics, and twisted-kernel Monte Carlo
//! estimators for cross-validating them.

// Validation guards are spelled `!(x > 0.0)` rather than `x <= 0.0` so that
// NaN inputs fail closed instead of slipping past the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod lmgf;
pub mod montecarlo;
pub mod network;
pub mod report;
pub mod statmodel;

pub use asymptotics::{
    ln_gaussian_upper_tail, normal_ln_tail, solve_rate_point, solve_theta, sweep, tail_asymptotic,
    tail_asymptotic_at, CorrectionVariant, NormalKind, RatePoint, SweepCell, SweepCellValues,
    SweepReport, SweepRequest, TailAsymptotic, TailDirection, TailSpec,
};
pub use error::{Error, Result};
pub use lmgf::{adaptive_quad, step_corrections, LimitingLmgf, TruncatedLmgf};
pub use montecarlo::{
    atc_step, is_tail, plain_mc_tail, EstimateWarning, McConfig, McEstimate, SteadyStateSampler,
};
pub use network::{
    build_metropolis, build_uniform_averaging, build_weight_kernel, CombinationMatrix, Topology,
    WeightKernel, DEFAULT_TRUNC_TOL,
};
pub use report::{
    estimates_to_csv, estimates_to_json, fmt_g17, sweep_to_csv, sweep_to_json, EstimateRow,
    ASYMPTOTICS_HEADER, ESTIMATE_HEADER,
};
pub use statmodel::{GaussianShiftModel, Hypothesis, LaplaceShiftModel, PreparedTwist, StatModel};
