//! Linear stochastic-approximation recursions over random signed networks:
//! spectral classification, predicted limits and rates, Monte Carlo checks,
//! group consensus and matrix-valued (Friedkin-Johnsen) opinion dynamics.
//!
//! The recursion is `x(s+1) = (1 - a(s)) x(s) + a(s) [P(s) x(s) + u(s)]`
//! where `(P(s), u(s))` are drawn independently at each step around means
//! `(P, u)`. [`analysis::classify`] predicts from `(P, u)` and the sign of the
//! gains whether it converges and to what; [`mc`] checks that empirically.

pub mod analysis;
pub mod engine;
pub mod ensembles;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod mc;
pub mod multidim;
pub mod reference_systems;
pub mod spectral;

pub use analysis::{
    arbitrary_gain_verdict, classify, deterministic_recursion_oracle, expected_limit, fj_fixed_point,
    group_consensus_verdict, predicted_rate, spanning_tree, ApplicableResult, ConvergenceVerdict, LimitPrediction,
    Regime,
};
pub use engine::{run, run_at, run_matrix, step, GainSchedule, GainSign, MatrixTrajectory, Trajectory};
pub use ensembles::{MatrixEnsemble, MatrixSampler, MatrixStateEnsemble, NoiseKind, Sampler, StreamKey};
pub use error::{Error, Result};
pub use exec::Execution;
pub use mc::{cauchy_gap, estimate, fit_rate, Reference, Scenario, TrajectoryStats};
pub use multidim::{fj_scenario, lift, FjNoise, LiftedEnsemble, LiftedSystem};
pub use spectral::{analyze, check_a3, check_a5, default_tol, projector_one, Partition, SpectralSummary};
