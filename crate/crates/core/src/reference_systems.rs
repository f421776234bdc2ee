//! Worked example systems used by tests, benches and the shipped configs.

use nalgebra::DMatrix;

/// 5-agent signed interaction matrix with unit row sums. Its eigenvalue 1 is
/// simple and every other eigenvalue has real part below 1, so SA iterations
/// with non-negative gains reach consensus.
pub fn signed_consensus_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            0.5, 0.3, 0.0, 0.3, -0.1, //
            -0.1, 0.3, 0.3, 0.0, 0.5, //
            0.0, 0.2, 0.4, 0.5, -0.1, //
            0.1, 0.0, 0.6, 0.4, -0.1, //
            0.1, -0.1, 0.1, 0.3, 0.6,
        ],
    )
}

/// 4-agent signed matrix that is not row-stochastic but fixes `[1, 1, 2, 2]`,
/// giving group consensus over `{1, 2}` and `{3, 4}`.
pub fn group_consensus_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.3, 0.5, 0.5, -0.4, //
            0.5, 0.3, -0.4, 0.5, //
            -0.1, 0.5, 0.4, 0.4, //
            0.5, -0.1, 0.4, 0.4,
        ],
    )
}
