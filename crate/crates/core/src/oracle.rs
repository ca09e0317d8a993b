//! Independent verification machinery.
//!
//! Everything here validates the analytic formulas through a second route:
//! the FIM against the Monte-Carlo covariance of the score, the score
//! against central finite differences of the log-likelihood, and the CRB
//! against three algebraically distinct computation paths. The routines are
//! used by the test suite and exposed through the CLI `verify` subcommand.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::CrbError;
use crate::fim::{
    assemble_full_fim, crb_omega_closed_form, crb_omega_via_schur, fim_blocks, score, FullFim,
};
use crate::linalg;
use crate::model::{
    generate_observations, MeasurementScheme, ModelInstance, ParameterVector,
    ParametricMatrixFamily, SnapshotSet,
};
use crate::singularity::numerical_rank;
use crate::tolerances;

/// Outcome of one oracle comparison.
#[derive(Clone, Debug)]
pub struct OracleReport {
    /// Headline relative Frobenius error (worst pairwise error for
    /// multi-path checks).
    pub relative_frobenius_error: f64,
    /// Monte-Carlo trial count; 0 for deterministic checks.
    pub trials: usize,
    /// Named sub-errors (per FIM block, or per path pair).
    pub per_block_errors: BTreeMap<String, f64>,
    /// Tolerance the errors were judged against.
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    fn from_errors(
        errors: BTreeMap<String, f64>,
        headline: f64,
        trials: usize,
        tolerance: f64,
    ) -> Self {
        let pass = headline <= tolerance && errors.values().all(|&e| e <= tolerance);
        OracleReport {
            relative_frobenius_error: headline,
            trials,
            per_block_errors: errors,
            tolerance,
            pass,
        }
    }
}

/// `||a - reference||_F / ||reference||_F`.
pub fn relative_frobenius_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    linalg::rel_frobenius(a, reference)
}

/// Per-trial seed derived from `(seed, trial)` with a SplitMix64 finalizer.
/// The rule is fixed so that trials are reproducible individually and
/// independent of execution order.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte-Carlo estimate `(1/trials) sum_i psi_i psi_i^T` of the FIM, using
/// the analytic score at the true parameters on freshly generated
/// observations, plus a comparison report against the analytic FIM.
///
/// Trials run in parallel over fixed-size chunks; each chunk accumulates in
/// trial order and chunks are combined in chunk order, so the result is
/// bitwise independent of thread scheduling.
pub fn empirical_fim(
    model: &ModelInstance,
    trials: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, OracleReport), CrbError> {
    assert!(trials >= 1, "need at least one trial");
    let pre = crate::fim::precompute(model)?;
    let analytic = assemble_full_fim(&crate::fim::fim_blocks_from(&pre));
    let layout = model.layout();
    let dim = layout.len();

    // theta-independent operands hoisted out of the trial loop
    let a = model.signal_matrix();
    let mut clean = DMatrix::<Complex64>::zeros(model.n_ambient(), layout.n_snapshots);
    for t in 0..layout.n_snapshots {
        clean.set_column(t, &(&a * model.snapshots().snapshot(t)));
    }
    let noise_power = model.scheme().noise_power();

    const CHUNK: usize = 512;
    let n_chunks = trials.div_ceil(CHUNK);
    let partials: Vec<DMatrix<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = DMatrix::<f64>::zeros(dim, dim);
            let hi = ((c + 1) * CHUNK).min(trials);
            for trial in c * CHUNK..hi {
                let obs = crate::model::observations_with(
                    &pre.phi_c,
                    &clean,
                    noise_power,
                    trial_seed(seed, trial as u64),
                );
                let psi = crate::fim::score_with(layout, &pre, model.snapshots(), &obs);
                acc.ger(1.0, &psi, &psi, 1.0);
            }
            acc
        })
        .collect();

    let mut empirical = DMatrix::<f64>::zeros(dim, dim);
    for p in &partials {
        empirical += p;
    }
    empirical /= trials as f64;

    let report = compare_fim(&empirical, &analytic, model, trials);
    Ok((empirical, report))
}

fn compare_fim(
    empirical: &DMatrix<f64>,
    analytic: &FullFim,
    model: &ModelInstance,
    trials: usize,
) -> OracleReport {
    let layout = model.layout();
    let m = layout.amplitude_len();
    let p = layout.n_params;
    let ana = analytic.matrix();

    let block = |mat: &DMatrix<f64>, r: usize, c: usize, nr: usize, nc: usize| {
        mat.view((r, c), (nr, nc)).into_owned()
    };
    let mut errors = BTreeMap::new();
    errors.insert(
        "h".to_string(),
        relative_frobenius_error(&block(empirical, 0, 0, m, m), &block(ana, 0, 0, m, m)),
    );
    if p > 0 {
        errors.insert(
            "delta".to_string(),
            relative_frobenius_error(&block(empirical, 0, m, m, p), &block(ana, 0, m, m, p)),
        );
        errors.insert(
            "gamma".to_string(),
            relative_frobenius_error(&block(empirical, m, m, p, p), &block(ana, m, m, p, p)),
        );
    }
    let headline = relative_frobenius_error(empirical, ana);
    OracleReport::from_errors(errors, headline, trials, tolerances::MC_FIM_REL_TOL)
}

/// Central differences `(f(theta + h e_i) - f(theta - h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(
    f: F,
    theta: &ParameterVector,
    steps: &DVector<f64>,
) -> Result<DVector<f64>, CrbError>
where
    F: Fn(&ParameterVector) -> f64,
{
    assert_eq!(steps.len(), theta.len(), "one step per coordinate");
    let mut grad = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let h = steps[i];
        let fp = f(&theta.perturbed(i, h));
        let fm = f(&theta.perturbed(i, -h));
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(CrbError::NonFinite("finite_diff_gradient"));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// The per-coordinate step `h_i = FD_STEP_SCALE * (1 + |theta_i|)`.
pub fn default_fd_steps(theta: &ParameterVector) -> DVector<f64> {
    theta
        .data()
        .map(|x| tolerances::FD_STEP_SCALE * (1.0 + x.abs()))
}

/// Compares the analytic score with finite differences of the
/// log-likelihood on observations generated from `obs_seed`.
pub fn score_finite_diff_check(
    model: &ModelInstance,
    obs_seed: u64,
) -> Result<OracleReport, CrbError> {
    let obs = generate_observations(model, obs_seed);
    let theta = model.theta();
    let analytic = score(&obs, model, &theta)?;
    let fd = finite_diff_gradient(
        |th| crate::model::log_likelihood(&obs, model, th).unwrap_or(f64::NAN),
        &theta,
        &default_fd_steps(&theta),
    )?;
    let rel = (&fd - &analytic).norm() / analytic.norm().max(f64::MIN_POSITIVE);
    Ok(OracleReport::from_errors(
        BTreeMap::new(),
        rel,
        0,
        tolerances::SCORE_FD_REL_TOL,
    ))
}

/// Finite-difference consistency of a matrix family's analytic derivative;
/// returns the worst relative error over parameters.
pub fn check_family_derivative(family: &ParametricMatrixFamily, omega: &DVector<f64>) -> f64 {
    let mut worst = 0.0f64;
    for p in 0..family.n_params() {
        let h = tolerances::FD_STEP_SCALE * (1.0 + omega[p].abs());
        let mut plus = omega.clone();
        plus[p] += h;
        let mut minus = omega.clone();
        minus[p] -= h;
        let fd = (family.evaluate(&plus) - family.evaluate(&minus)) / Complex64::new(2.0 * h, 0.0);
        let analytic = family.derivative(omega, p);
        let denom = analytic.norm().max(1e-300);
        worst = worst.max((fd - analytic).norm() / denom);
    }
    worst
}

/// Compares the three CRB(Omega) paths: closed form, Schur complement, and
/// the Omega corner of the full FIM inverse. All three must agree pairwise
/// within `CRB_PATH_REL_TOL` (or all three must report singularity).
/// Requires invertible `H`; a singular `H` makes the comparison
/// inapplicable and is returned as an error.
pub fn crb_cross_check(model: &ModelInstance) -> Result<OracleReport, CrbError> {
    let blocks = fim_blocks(model)?;
    let k = model.n_sources();
    if numerical_rank(blocks.h(), None) < k {
        let sv = blocks.h().singular_values();
        return Err(CrbError::SingularMatrix {
            name: "H",
            dim: k,
            rank: numerical_rank(blocks.h(), None),
            min_singular_value: sv.min(),
        });
    }

    let closed = crb_omega_closed_form(model)?;
    let schur = crb_omega_via_schur(&blocks)?;

    // third path: explicit inverse of the assembled FIM
    let full = assemble_full_fim(&blocks);
    let p = model.n_params();
    let full_corner: Option<DMatrix<f64>> = if numerical_rank(full.matrix(), None) < full.dim() {
        None
    } else {
        full.matrix().clone().try_inverse().map(|inv| {
            let om = full.layout().omega_range();
            linalg::symmetric_part(&inv.view((om.start, om.start), (p, p)).into_owned())
        })
    };

    let mut errors = BTreeMap::new();
    let pass;
    let headline;
    match (closed.bounded(), schur.bounded(), full_corner.as_ref()) {
        (Some(c), Some(s), Some(f)) => {
            errors.insert("closed_vs_schur".into(), relative_frobenius_error(c, s));
            errors.insert(
                "closed_vs_full_inverse".into(),
                relative_frobenius_error(c, f),
            );
            errors.insert(
                "schur_vs_full_inverse".into(),
                relative_frobenius_error(s, f),
            );
            headline = errors.values().cloned().fold(0.0, f64::max);
            pass = headline <= tolerances::CRB_PATH_REL_TOL;
        }
        (None, None, None) => {
            // consistent singularity on all three paths
            headline = 0.0;
            pass = true;
        }
        _ => {
            headline = f64::INFINITY;
            pass = false;
        }
    }
    Ok(OracleReport {
        relative_frobenius_error: headline,
        trials: 0,
        per_block_errors: errors,
        tolerance: tolerances::CRB_PATH_REL_TOL,
        pass,
    })
}

/// Dimensions and scales for [`random_model`]. The defaults are a
/// desk-scale well-posed problem (`N_y > K`).
#[derive(Clone, Copy, Debug)]
pub struct RandomModelSpec {
    pub n_ambient: usize,
    pub n_measurements: usize,
    pub n_sources: usize,
    pub n_params: usize,
    pub n_snapshots: usize,
    pub noise_power: f64,
    /// Use `Phi = I` (requires `n_measurements == n_ambient`).
    pub identity_phi: bool,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            n_ambient: 6,
            n_measurements: 4,
            n_sources: 2,
            n_params: 2,
            n_snapshots: 3,
            noise_power: 0.8,
            identity_phi: false,
        }
    }
}

/// Generates a reproducible random model instance around a smooth synthetic
/// family `A(Omega) = A_0 + sum_p (omega_p A_p + omega_p^2 C_p)` whose
/// analytic derivative `A_p + 2 omega_p C_p` is exact. Amplitudes are unit
/// complex Gaussians; `Phi` is a Gaussian matrix (or identity on request).
pub fn random_model(spec: &RandomModelSpec, seed: u64) -> ModelInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_x, k, p) = (spec.n_ambient, spec.n_sources, spec.n_params);

    let mut cgauss = |rows: usize, cols: usize, scale: f64| -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(
                scale * rng.sample::<f64, _>(StandardNormal),
                scale * rng.sample::<f64, _>(StandardNormal),
            )
        })
    };

    let a0 = cgauss(n_x, k, 1.0);
    let linear: Vec<DMatrix<Complex64>> = (0..p).map(|_| cgauss(n_x, k, 1.0)).collect();
    let quad: Vec<DMatrix<Complex64>> = (0..p).map(|_| cgauss(n_x, k, 0.3)).collect();

    let family = {
        let a0 = a0.clone();
        let linear_e = linear.clone();
        let quad_e = quad.clone();
        ParametricMatrixFamily::new(
            n_x,
            k,
            p,
            move |omega: &DVector<f64>| {
                let mut a = a0.clone();
                for q in 0..omega.len() {
                    a += &linear_e[q] * Complex64::new(omega[q], 0.0);
                    a += &quad_e[q] * Complex64::new(omega[q] * omega[q], 0.0);
                }
                a
            },
            move |omega: &DVector<f64>, q: usize| {
                &linear[q] + &quad[q] * Complex64::new(2.0 * omega[q], 0.0)
            },
        )
    };

    let omega = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let amplitudes = DMatrix::from_fn(k, spec.n_snapshots, |_, _| {
        Complex64::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
    });
    let snapshots = SnapshotSet::new(amplitudes).expect("non-empty by construction");

    let phi = if spec.identity_phi {
        assert_eq!(spec.n_measurements, n_x, "identity Phi needs N_y = N_x");
        DMatrix::identity(n_x, n_x)
    } else {
        let scale = (n_x as f64).recip().sqrt();
        DMatrix::from_fn(spec.n_measurements, n_x, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })
    };
    let scheme = MeasurementScheme::new(phi, spec.noise_power)
        .expect("Gaussian Phi is full row rank almost surely");

    ModelInstance::new(family, omega, snapshots, scheme).expect("dimensions consistent")
}
