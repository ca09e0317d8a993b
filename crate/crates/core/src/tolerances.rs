//! Central table of numerical tolerances.
//!
//! Every threshold used by the oracle machinery, the acceptance suite, and
//! the singularity diagnostics is defined here once and referenced by name.
//! No test carries its own magic numbers.

use std::collections::BTreeMap;

/// Trial count at which the Monte-Carlo FIM tolerance below is calibrated.
pub const MC_FIM_TRIALS: usize = 200_000;

/// Relative Frobenius error allowed between the analytic FIM and the
/// empirical score covariance at [`MC_FIM_TRIALS`] trials.
pub const MC_FIM_REL_TOL: f64 = 0.05;

/// Relative error allowed between the analytic score and central finite
/// differences of the log-likelihood.
pub const SCORE_FD_REL_TOL: f64 = 1e-5;

/// Relative error allowed between a matrix family's analytic parameter
/// derivative and central finite differences of its evaluation map.
pub const FAMILY_FD_REL_TOL: f64 = 1e-5;

/// Step scale for central differences: `h_i = FD_STEP_SCALE * (1 + |x_i|)`.
/// Balances truncation against round-off for double-precision likelihoods.
pub const FD_STEP_SCALE: f64 = 1e-6;

/// Pairwise relative Frobenius tolerance for the three CRB computation
/// paths (closed form, Schur complement, full-FIM inverse corner).
pub const CRB_PATH_REL_TOL: f64 = 1e-8;

/// Tolerance for the closed-form vs. Schur-path comparison alone (both
/// avoid the large full-FIM inverse, so they agree tighter).
pub const SCHUR_DIRECT_REL_TOL: f64 = 1e-10;

/// Entrywise tolerance for the real/imaginary outer-product identities
/// used in the FIM block derivation.
pub const COMPLEX_IDENTITY_TOL: f64 = 1e-13;

/// A FIM eigenvalue below `SINGULAR_FIM_EIG_TOL * ||I||` certifies
/// singularity; a witness quadratic form is held to the same scale.
pub const SINGULAR_FIM_EIG_TOL: f64 = 1e-10;

/// Relative symmetry defect allowed in the assembled FIM.
pub const FIM_SYMMETRY_TOL: f64 = 1e-12;

/// Most negative eigenvalue tolerated in a nominally PSD matrix,
/// relative to its norm.
pub const PSD_EIG_TOL: f64 = 1e-10;

/// PSD tolerance for the noise covariance (a single product, so tighter).
pub const NOISE_COV_PSD_TOL: f64 = 1e-12;

/// Relative change allowed in CRB(Omega) under an invertible left
/// transform of the measurement matrix.
pub const SENSING_INVARIANCE_TOL: f64 = 1e-8;

/// Minimum eigenvalue (relative to norm) allowed in the CRB difference
/// when one measurement row is removed; the difference is PSD in theory.
pub const NESTED_MONOTONE_EIG_TOL: f64 = 1e-9;

/// Tolerance in dB for the sweep monotonicity check over nested
/// measurement matrices.
pub const SWEEP_MONOTONE_DB_TOL: f64 = 1e-9;

/// Relative tolerance for the reduction of the compressed-model CRB to the
/// classical uncompressed formula when the measurement matrix is identity.
pub const CLASSICAL_REDUCTION_TOL: f64 = 1e-10;

/// Tolerance for projector idempotence and annihilation checks.
pub const PROJECTOR_TOL: f64 = 1e-10;

/// Relative tolerance between the linear-solve and explicit-inverse paths
/// of the signal reconstruction trace bound.
pub const TRACE_PATH_REL_TOL: f64 = 1e-8;

/// The tolerance table embedded in run manifests.
pub fn tolerance_table() -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("mc_fim_rel_tol", MC_FIM_REL_TOL),
        ("score_fd_rel_tol", SCORE_FD_REL_TOL),
        ("family_fd_rel_tol", FAMILY_FD_REL_TOL),
        ("fd_step_scale", FD_STEP_SCALE),
        ("crb_path_rel_tol", CRB_PATH_REL_TOL),
        ("schur_direct_rel_tol", SCHUR_DIRECT_REL_TOL),
        ("complex_identity_tol", COMPLEX_IDENTITY_TOL),
        ("singular_fim_eig_tol", SINGULAR_FIM_EIG_TOL),
        ("fim_symmetry_tol", FIM_SYMMETRY_TOL),
        ("psd_eig_tol", PSD_EIG_TOL),
        ("sensing_invariance_tol", SENSING_INVARIANCE_TOL),
        ("nested_monotone_eig_tol", NESTED_MONOTONE_EIG_TOL),
        ("sweep_monotone_db_tol", SWEEP_MONOTONE_DB_TOL),
        ("classical_reduction_tol", CLASSICAL_REDUCTION_TOL),
        ("projector_tol", PROJECTOR_TOL),
        ("trace_path_rel_tol", TRACE_PATH_REL_TOL),
    ])
}
