//! Analytic score, Fisher information blocks, and Cramér-Rao bounds.
//!
//! For the compressed model `y(t) = B d(t) + n(t)` with `B = Phi A(Omega)`
//! and `n(t) ~ CN(0, R)`, the Fisher information of the real parameter
//! vector `theta = [Re d(1); Im d(1); ...; Re d(N); Im d(N); Omega]` is
//! built from three block families:
//!
//! ```text
//! H       = 2 B^H R^{-1} B                          (K x K, Hermitian)
//! Delta_t = 2 B^H R^{-1} Phi D(t)                   (K x P)
//! Gamma   = 2 sum_t Re{ D(t)^H Phi^T R^{-1} Phi D(t) }   (P x P)
//! ```
//!
//! where `D(t) = [dA/d omega_1 d(t), ..., dA/d omega_P d(t)]`. The full FIM
//! is block-diagonal in the per-snapshot `2K x 2K` real forms of `H`,
//! bordered by `[Re Delta_t; Im Delta_t]` and cornered by `Gamma`.
//!
//! The CRB for `Omega` alone has two equivalent expressions: the Schur
//! complement `Gamma - sum_t Re{ Delta_t^H H^{-1} Delta_t }` of the
//! amplitude block, and the projector form
//!
//! ```text
//! CRB^{-1}(Omega) = 2 sum_t Re{ D^H Phi^T R^{-1} (I - B (B^H R^{-1} B)^{-1} B^H R^{-1}) Phi D }
//! ```
//!
//! The projector form is the production path; the Schur path and the full
//! FIM inverse exist as independent cross-checks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::CrbError;
use crate::linalg::{self, HpdSolver, SpdSolver};
use crate::model::{
    singular_r_error, ModelInstance, ObservationSet, ParameterVector, ParametricMatrixFamily,
    ThetaLayout,
};
use crate::singularity::default_rank_tolerance;

/// The `H`, `Delta_1..Delta_N`, `Gamma` information blocks of a model.
#[derive(Clone, Debug)]
pub struct FimBlocks {
    h: DMatrix<Complex64>,
    deltas: Vec<DMatrix<Complex64>>,
    gamma: DMatrix<f64>,
}

impl FimBlocks {
    /// `H = 2 B^H R^{-1} B`, Hermitian PSD.
    pub fn h(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    /// `Delta_t = 2 B^H R^{-1} Phi D(t)`, one per snapshot.
    pub fn deltas(&self) -> &[DMatrix<Complex64>] {
        &self.deltas
    }

    /// `Gamma`, real symmetric PSD.
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn n_sources(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.deltas.len()
    }

    pub fn n_params(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            n_sources: self.n_sources(),
            n_snapshots: self.n_snapshots(),
            n_params: self.n_params(),
        }
    }
}

/// The assembled real FIM over the full parameter vector.
#[derive(Clone, Debug)]
pub struct FullFim {
    matrix: DMatrix<f64>,
    layout: ThetaLayout,
}

impl FullFim {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    /// The amplitude block `T`: the leading `2NK x 2NK` principal submatrix.
    pub fn amplitude_block(&self) -> DMatrix<f64> {
        let m = self.layout.amplitude_len();
        self.matrix.view((0, 0), (m, m)).into_owned()
    }
}

/// Rank evidence attached to a singular bound verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularInfo {
    /// Which matrix failed the invertibility test.
    pub matrix: &'static str,
    pub dim: usize,
    pub rank: usize,
    pub min_singular_value: f64,
}

/// Either a finite CRB covariance or structured evidence of singularity.
#[derive(Clone, Debug)]
pub enum CrbOutcome {
    Bounded(DMatrix<f64>),
    Singular(SingularInfo),
}

impl CrbOutcome {
    pub fn bounded(&self) -> Option<&DMatrix<f64>> {
        match self {
            CrbOutcome::Bounded(m) => Some(m),
            CrbOutcome::Singular(_) => None,
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, CrbOutcome::Singular(_))
    }

    pub fn singular_info(&self) -> Option<&SingularInfo> {
        match self {
            CrbOutcome::Bounded(_) => None,
            CrbOutcome::Singular(info) => Some(info),
        }
    }
}

/// CRB covariance for `Omega` plus optional per-snapshot signal
/// reconstruction trace bounds.
#[derive(Clone, Debug)]
pub struct CrbResult {
    pub crb_omega: CrbOutcome,
    /// Diagonal of `CRB(Omega)`; present iff the bound is finite.
    pub per_param_variance: Option<DVector<f64>>,
    /// `Tr{ dx(t)/dtheta I^{-1} dx(t)^H/dtheta }` per snapshot; filled by
    /// [`crb_report`], `None` on the plain `Omega`-only paths.
    pub signal_trace_bound: Option<DVector<f64>>,
}

impl CrbResult {
    fn from_outcome(outcome: CrbOutcome) -> Self {
        let per_param_variance = outcome.bounded().map(|m| m.diagonal());
        CrbResult {
            crb_omega: outcome,
            per_param_variance,
            signal_trace_bound: None,
        }
    }

    pub fn bounded(&self) -> Option<&DMatrix<f64>> {
        self.crb_omega.bounded()
    }

    pub fn is_singular(&self) -> bool {
        self.crb_omega.is_singular()
    }
}

/// Shared per-model precomputation: `B`, the `R` solver, and `D(t)`.
pub(crate) struct Precomputed {
    pub phi_c: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub r_solver: SpdSolver,
    pub d_mats: Vec<DMatrix<Complex64>>,
}

pub(crate) fn precompute(model: &ModelInstance) -> Result<Precomputed, CrbError> {
    let r = model.scheme().noise_covariance();
    let r_solver = SpdSolver::new(&r).ok_or_else(|| singular_r_error(&r))?;
    let phi_c = linalg::to_complex(model.scheme().phi());
    let a = model.signal_matrix();
    let b = &phi_c * a;
    let d_mats = (0..model.n_snapshots())
        .map(|t| {
            build_d(
                model.family(),
                model.omega(),
                &model.snapshots().snapshot(t),
            )
            .expect("model instance dimensions are validated at construction")
        })
        .collect();
    Ok(Precomputed {
        phi_c,
        b,
        r_solver,
        d_mats,
    })
}

/// `D(t)`: column `p` is `(dA/d omega_p) d(t)`.
pub fn build_d(
    family: &ParametricMatrixFamily,
    omega: &DVector<f64>,
    d_t: &DVector<Complex64>,
) -> Result<DMatrix<Complex64>, CrbError> {
    if d_t.len() != family.n_cols() {
        return Err(CrbError::DimensionMismatch {
            context: "build_d",
            expected: format!("amplitude vector of length {}", family.n_cols()),
            actual: format!("length {}", d_t.len()),
        });
    }
    if omega.len() != family.n_params() {
        return Err(CrbError::DimensionMismatch {
            context: "build_d",
            expected: format!("omega of length {}", family.n_params()),
            actual: format!("length {}", omega.len()),
        });
    }
    let mut d = DMatrix::zeros(family.n_rows(), family.n_params());
    for p in 0..family.n_params() {
        d.set_column(p, &(family.derivative(omega, p) * d_t));
    }
    Ok(d)
}

/// Gradient of the log-likelihood at `theta`, in canonical layout:
///
/// ```text
/// dLL/d Re d(t) = 2 Re{ B^H R^{-1} n(t) }
/// dLL/d Im d(t) = 2 Im{ B^H R^{-1} n(t) }
/// dLL/d Omega   = 2 sum_t Re{ D(t)^H Phi^T R^{-1} n(t) }
/// ```
pub fn score(
    obs: &ObservationSet,
    model: &ModelInstance,
    theta: &ParameterVector,
) -> Result<DVector<f64>, CrbError> {
    let layout = model.layout();
    if theta.layout() != layout {
        return Err(CrbError::DimensionMismatch {
            context: "score",
            expected: format!("{layout:?}"),
            actual: format!("{:?}", theta.layout()),
        });
    }
    if obs.n_measurements() != model.n_measurements() || obs.n_snapshots() != model.n_snapshots() {
        return Err(CrbError::DimensionMismatch {
            context: "score",
            expected: format!(
                "{}x{} observations",
                model.n_measurements(),
                model.n_snapshots()
            ),
            actual: format!("{}x{}", obs.n_measurements(), obs.n_snapshots()),
        });
    }

    let (snapshots, omega) = theta.split();
    let phi_c = linalg::to_complex(model.scheme().phi());
    let a = model.family().evaluate(&omega);
    let b = &phi_c * a;
    let r = model.scheme().noise_covariance();
    let r_solver = SpdSolver::new(&r).ok_or_else(|| singular_r_error(&r))?;
    let d_mats = (0..layout.n_snapshots)
        .map(|t| build_d(model.family(), &omega, &snapshots.snapshot(t)))
        .collect::<Result<Vec<_>, _>>()?;
    let pre = Precomputed {
        phi_c,
        b,
        r_solver,
        d_mats,
    };
    Ok(score_with(layout, &pre, &snapshots, obs))
}

/// Score with all theta-dependent operators already built; shared by
/// [`score`] and the Monte-Carlo oracle (which evaluates at the true
/// parameters many times).
pub(crate) fn score_with(
    layout: ThetaLayout,
    pre: &Precomputed,
    snapshots: &crate::model::SnapshotSet,
    obs: &ObservationSet,
) -> DVector<f64> {
    let mut psi = DVector::zeros(layout.len());
    let mut omega_grad = DVector::<f64>::zeros(layout.n_params);
    for t in 0..layout.n_snapshots {
        let d_t = snapshots.snapshot(t);
        let resid = obs.measurements().column(t) - &pre.b * &d_t;
        let solved = pre.r_solver.solve_complex_vec(&resid);

        let g = pre.b.adjoint() * &solved;
        let re = layout.re_range(t);
        let im = layout.im_range(t);
        for k in 0..layout.n_sources {
            psi[re.start + k] = 2.0 * g[k].re;
            psi[im.start + k] = 2.0 * g[k].im;
        }

        let back = pre.phi_c.transpose() * solved;
        let contrib = pre.d_mats[t].adjoint() * back;
        for p in 0..layout.n_params {
            omega_grad[p] += 2.0 * contrib[p].re;
        }
    }
    let om = layout.omega_range();
    for p in 0..layout.n_params {
        psi[om.start + p] = omega_grad[p];
    }
    psi
}

/// Computes `H`, `Delta_1..Delta_N`, and `Gamma` at the model's true
/// parameters. `H` and `Gamma` are symmetrized exactly after assembly.
pub fn fim_blocks(model: &ModelInstance) -> Result<FimBlocks, CrbError> {
    let pre = precompute(model)?;
    Ok(fim_blocks_from(&pre))
}

pub(crate) fn fim_blocks_from(pre: &Precomputed) -> FimBlocks {
    let rinv_b = pre.r_solver.solve_complex(&pre.b);
    let h = linalg::hermitian_part(&(pre.b.adjoint() * &rinv_b).scale(2.0));

    let p = pre.d_mats.first().map_or(0, |d| d.ncols());
    let mut gamma = DMatrix::<f64>::zeros(p, p);
    let mut deltas = Vec::with_capacity(pre.d_mats.len());
    for d_mat in &pre.d_mats {
        let f_t = &pre.phi_c * d_mat;
        let rinv_f = pre.r_solver.solve_complex(&f_t);
        deltas.push((pre.b.adjoint() * &rinv_f).scale(2.0));
        gamma += linalg::real_part(&(f_t.adjoint() * rinv_f)).scale(2.0);
    }
    let gamma = linalg::symmetric_part(&gamma);
    FimBlocks { h, deltas, gamma }
}

/// Assembles the real `(2NK+P) x (2NK+P)` FIM: per-snapshot diagonal blocks
/// `[[Re H, -Im H], [Im H, Re H]]`, border columns `[Re Delta_t; Im Delta_t]`,
/// corner `Gamma`. Symmetric by construction.
pub fn assemble_full_fim(blocks: &FimBlocks) -> FullFim {
    let layout = blocks.layout();
    let k = layout.n_sources;
    let p = layout.n_params;
    let mut m = DMatrix::zeros(layout.len(), layout.len());

    let h_re = linalg::real_part(&blocks.h);
    let h_im = linalg::imag_part(&blocks.h);
    for t in 0..layout.n_snapshots {
        let re = layout.re_range(t).start;
        let im = layout.im_range(t).start;
        m.view_mut((re, re), (k, k)).copy_from(&h_re);
        m.view_mut((re, im), (k, k)).copy_from(&(-&h_im));
        m.view_mut((im, re), (k, k)).copy_from(&h_im);
        m.view_mut((im, im), (k, k)).copy_from(&h_re);

        let delta = &blocks.deltas[t];
        let d_re = linalg::real_part(delta);
        let d_im = linalg::imag_part(delta);
        let om = layout.omega_range().start;
        m.view_mut((re, om), (k, p)).copy_from(&d_re);
        m.view_mut((im, om), (k, p)).copy_from(&d_im);
        m.view_mut((om, re), (p, k)).copy_from(&d_re.transpose());
        m.view_mut((om, im), (p, k)).copy_from(&d_im.transpose());
    }
    let om = layout.omega_range().start;
    m.view_mut((om, om), (p, p)).copy_from(&blocks.gamma);

    FullFim { matrix: m, layout }
}

/// Schur complement of the amplitude block:
/// `Gamma - sum_t Re{ Delta_t^H H^{-1} Delta_t }`, which equals
/// `CRB^{-1}(Omega)`. Requires invertible `H`.
pub(crate) fn schur_complement(blocks: &FimBlocks) -> Result<DMatrix<f64>, SingularInfo> {
    let h_solver = invertible_hpd(blocks.h(), "H")?;
    let mut s = blocks.gamma.clone();
    for delta in &blocks.deltas {
        let x = h_solver.solve(delta);
        s -= linalg::real_part(&(delta.adjoint() * x));
    }
    Ok(linalg::symmetric_part(&s))
}

/// Checks numerical invertibility against the default rank tolerance and
/// returns a Cholesky solver on success, rank evidence on failure.
fn invertible_hpd(m: &DMatrix<Complex64>, name: &'static str) -> Result<HpdSolver, SingularInfo> {
    let info = rank_evidence(m, name);
    if info.rank < info.dim {
        return Err(info);
    }
    match HpdSolver::new(m) {
        Some(s) => Ok(s),
        None => Err(info),
    }
}

fn rank_evidence(m: &DMatrix<Complex64>, name: &'static str) -> SingularInfo {
    let sv = m.singular_values();
    let dim = m.nrows().min(m.ncols());
    let tol = default_rank_tolerance(m.nrows(), m.ncols()) * sv.max();
    SingularInfo {
        matrix: name,
        dim,
        rank: sv.iter().filter(|&&s| s > tol).count(),
        min_singular_value: if dim == 0 { 0.0 } else { sv.min() },
    }
}

/// Rank evidence for a real matrix. `reference_scale` widens the cutoff
/// when the matrix is the residue of a cancellation at a larger scale:
/// singular values are counted above
/// `max(dim) * eps * max(sigma_max, reference_scale)`.
fn rank_evidence_real(m: &DMatrix<f64>, name: &'static str, reference_scale: f64) -> SingularInfo {
    let dim = m.nrows().min(m.ncols());
    if dim == 0 {
        return SingularInfo {
            matrix: name,
            dim: 0,
            rank: 0,
            min_singular_value: 0.0,
        };
    }
    let sv = m.singular_values();
    let tol = default_rank_tolerance(m.nrows(), m.ncols()) * sv.max().max(reference_scale);
    SingularInfo {
        matrix: name,
        dim,
        rank: sv.iter().filter(|&&s| s > tol).count(),
        min_singular_value: sv.min(),
    }
}

/// Inverts a symmetric PSD `CRB^{-1}` candidate, or reports why it cannot
/// be inverted. The candidate is a difference of two information terms, so
/// its rank is judged against the scale of the positive term
/// (`information_scale`, i.e. `sigma_max` of `Gamma`); below that scale's
/// round-off floor the difference is numerically the zero matrix.
fn invert_crb_inverse(crb_inv: &DMatrix<f64>, information_scale: f64) -> CrbOutcome {
    let info = rank_evidence_real(crb_inv, "CRB^{-1}(Omega)", information_scale);
    if info.rank < info.dim {
        return CrbOutcome::Singular(info);
    }
    match SpdSolver::new(crb_inv) {
        Some(solver) => {
            let inv = solver.solve(&DMatrix::identity(crb_inv.nrows(), crb_inv.ncols()));
            CrbOutcome::Bounded(linalg::symmetric_part(&inv))
        }
        None => CrbOutcome::Singular(info),
    }
}

/// Production CRB path. Inverts the effective information about `Omega`
/// from [`omega_information`]. A singular `H` or a singular accumulated
/// matrix yields a structured verdict, not an error.
pub fn crb_omega_closed_form(model: &ModelInstance) -> Result<CrbResult, CrbError> {
    let pre = precompute(model)?;
    Ok(CrbResult::from_outcome(closed_form_outcome(
        &pre,
        model.n_params(),
    )))
}

/// Effective Fisher information about `Omega` alone, i.e. `CRB^{-1}(Omega)`
/// before inversion:
///
/// ```text
/// 2 sum_t Re{ D^H Phi^T R^{-1} (I - B (B^H R^{-1} B)^{-1} B^H R^{-1}) Phi D }
/// ```
///
/// Errors when `H` is numerically singular (the amplitude nuisance cannot
/// be eliminated).
pub fn omega_information(model: &ModelInstance) -> Result<DMatrix<f64>, CrbError> {
    let pre = precompute(model)?;
    omega_information_from(&pre, model.n_params())
        .map(|(m, _)| m)
        .map_err(|info| CrbError::SingularMatrix {
            name: info.matrix,
            dim: info.dim,
            rank: info.rank,
            min_singular_value: info.min_singular_value,
        })
}

/// Returns the accumulated `CRB^{-1}(Omega)` together with the spectral
/// norm of its positive term (the `Gamma` scale, used as the rank
/// reference downstream).
pub(crate) fn omega_information_from(
    pre: &Precomputed,
    n_params: usize,
) -> Result<(DMatrix<f64>, f64), SingularInfo> {
    let bhb = linalg::hermitian_part(&(pre.b.adjoint() * pre.r_solver.solve_complex(&pre.b)));
    let h_solver = invertible_hpd(&bhb, "H")?;

    let mut gamma_acc = DMatrix::<f64>::zeros(n_params, n_params);
    let mut projected_acc = DMatrix::<f64>::zeros(n_params, n_params);
    for d_mat in &pre.d_mats {
        let f_t = &pre.phi_c * d_mat;
        let u_t = pre.r_solver.solve_complex(&f_t);
        let g_t = pre.b.adjoint() * &u_t;
        let w_t = h_solver.solve(&g_t);
        gamma_acc += linalg::real_part(&(f_t.adjoint() * u_t)).scale(2.0);
        projected_acc += linalg::real_part(&(g_t.adjoint() * w_t)).scale(2.0);
    }
    let crb_inv = linalg::symmetric_part(&(&gamma_acc - projected_acc));
    let scale = if n_params == 0 {
        0.0
    } else {
        gamma_acc.singular_values().max()
    };
    Ok((crb_inv, scale))
}

pub(crate) fn closed_form_outcome(pre: &Precomputed, n_params: usize) -> CrbOutcome {
    match omega_information_from(pre, n_params) {
        Ok((m, scale)) => invert_crb_inverse(&m, scale),
        Err(info) => CrbOutcome::Singular(info),
    }
}

/// Cross-check CRB path through the Schur complement of the amplitude
/// block. Same return contract as [`crb_omega_closed_form`].
pub fn crb_omega_via_schur(blocks: &FimBlocks) -> Result<CrbResult, CrbError> {
    let gamma_scale = if blocks.n_params() == 0 {
        0.0
    } else {
        blocks.gamma().clone().singular_values().max()
    };
    let outcome = match schur_complement(blocks) {
        Ok(s) => invert_crb_inverse(&s, gamma_scale),
        Err(info) => CrbOutcome::Singular(info),
    };
    Ok(CrbResult::from_outcome(outcome))
}

/// `dx(t)/dtheta` for `x(t) = A(Omega) d(t)`: block `[A, jA]` at snapshot
/// `t`'s columns, `D(t)` at the `Omega` columns, zero elsewhere. 0-based `t`.
pub fn signal_jacobian(model: &ModelInstance, t: usize) -> Result<DMatrix<Complex64>, CrbError> {
    let layout = model.layout();
    if t >= layout.n_snapshots {
        return Err(CrbError::SnapshotOutOfRange {
            index: t,
            n_snapshots: layout.n_snapshots,
        });
    }
    let a = model.signal_matrix();
    let d_mat = build_d(
        model.family(),
        model.omega(),
        &model.snapshots().snapshot(t),
    )?;
    let n_x = model.n_ambient();
    let k = layout.n_sources;

    let mut j = DMatrix::zeros(n_x, layout.len());
    let re = layout.re_range(t).start;
    let im = layout.im_range(t).start;
    j.view_mut((0, re), (n_x, k)).copy_from(&a);
    j.view_mut((0, im), (n_x, k))
        .copy_from(&a.map(|z| z * Complex64::new(0.0, 1.0)));
    j.view_mut((0, layout.omega_range().start), (n_x, layout.n_params))
        .copy_from(&d_mat);
    Ok(j)
}

/// Signal reconstruction bound `Tr{ J_t I^{-1} J_t^H }` for snapshot `t`,
/// evaluated through Cholesky solves with the assembled FIM. Errors when
/// the FIM is numerically singular (the trace bound is then unbounded).
pub fn signal_crb_trace(model: &ModelInstance, t: usize) -> Result<f64, CrbError> {
    let blocks = fim_blocks(model)?;
    let full = assemble_full_fim(&blocks);
    let solver = full_fim_solver(&full)?;
    signal_crb_trace_with(model, t, &solver)
}

pub(crate) fn full_fim_solver(full: &FullFim) -> Result<SpdSolver, CrbError> {
    let info = rank_evidence_real(full.matrix(), "I(theta)", 0.0);
    if info.rank < info.dim {
        return Err(CrbError::SingularMatrix {
            name: "I(theta)",
            dim: info.dim,
            rank: info.rank,
            min_singular_value: info.min_singular_value,
        });
    }
    SpdSolver::new(full.matrix()).ok_or(CrbError::SingularMatrix {
        name: "I(theta)",
        dim: info.dim,
        rank: info.rank,
        min_singular_value: info.min_singular_value,
    })
}

pub(crate) fn signal_crb_trace_with(
    model: &ModelInstance,
    t: usize,
    solver: &SpdSolver,
) -> Result<f64, CrbError> {
    let j = signal_jacobian(model, t)?;
    let solved = solver.solve_complex(&j.adjoint());
    let mut trace = Complex64::new(0.0, 0.0);
    for i in 0..j.nrows() {
        trace += (j.row(i) * solved.column(i))[(0, 0)];
    }
    debug_assert!(trace.im.abs() <= 1e-10 * trace.re.abs().max(1.0));
    Ok(trace.re)
}

/// Full CRB report: `Omega` bound via the production path plus, when the
/// FIM is invertible, the per-snapshot signal reconstruction trace bounds.
pub fn crb_report(model: &ModelInstance) -> Result<CrbResult, CrbError> {
    let mut result = crb_omega_closed_form(model)?;
    if result.is_singular() {
        return Ok(result);
    }
    let blocks = fim_blocks(model)?;
    let full = assemble_full_fim(&blocks);
    if let Ok(solver) = full_fim_solver(&full) {
        let traces: Result<Vec<f64>, CrbError> = (0..model.n_snapshots())
            .map(|t| signal_crb_trace_with(model, t, &solver))
            .collect();
        result.signal_trace_bound = Some(DVector::from_vec(traces?));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_theta, MeasurementScheme, SnapshotSet};
    use crate::oracle::{random_model, relative_frobenius_error, RandomModelSpec};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cplx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_complex_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            cplx(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    #[test]
    fn build_d_unit_amplitude_picks_first_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_complex_matrix(&mut rng, 4, 3);
        let m2 = m.clone();
        let family =
            ParametricMatrixFamily::new(4, 3, 1, move |_| m.clone(), move |_, _| m2.clone());
        let mut e1 = DVector::zeros(3);
        e1[0] = cplx(1.0, 0.0);
        let d = build_d(&family, &dvector![0.3], &e1).unwrap();
        assert_eq!(d.column(0), family.derivative(&dvector![0.3], 0).column(0));
    }

    #[test]
    fn build_d_zero_amplitudes() {
        let model = random_model(&RandomModelSpec::default(), 4);
        let zero = DVector::zeros(model.n_sources());
        let d = build_d(model.family(), model.omega(), &zero).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn build_d_matches_kronecker_oracle() {
        let model = random_model(&RandomModelSpec::default(), 9);
        let d_t = model.snapshots().snapshot(0);
        let d = build_d(model.family(), model.omega(), &d_t).unwrap();

        // oracle: [dA/dw_1, ..., dA/dw_P] (I_P kron d(t))
        let p = model.n_params();
        let k = model.n_sources();
        let mut stacked = DMatrix::zeros(model.n_ambient(), p * k);
        for q in 0..p {
            stacked
                .view_mut((0, q * k), (model.n_ambient(), k))
                .copy_from(&model.family().derivative(model.omega(), q));
        }
        let eye = DMatrix::<Complex64>::identity(p, p);
        let kron = eye.kronecker(&DMatrix::from_column_slice(k, 1, d_t.as_slice()));
        let oracle = stacked * kron;
        assert!((d.clone() - &oracle).norm() <= 1e-14 * oracle.norm().max(1.0));
    }

    #[test]
    fn score_vanishes_at_truth_without_noise() {
        let model = random_model(&RandomModelSpec::default(), 12);
        let clean = linalg::to_complex(model.scheme().phi())
            * model.signal_matrix()
            * model.snapshots().amplitudes();
        let obs = ObservationSet::new(clean);
        let psi = score(&obs, &model, &model.theta()).unwrap();
        assert!(psi.norm() <= 1e-10);
    }

    #[test]
    fn score_matches_finite_differences() {
        for seed in 0..5u64 {
            let model = random_model(&RandomModelSpec::default(), 100 + seed);
            let obs = crate::model::generate_observations(&model, 55 + seed);
            let theta = model.theta();
            let psi = score(&obs, &model, &theta).unwrap();
            let steps = crate::oracle::default_fd_steps(&theta);
            let fd = crate::oracle::finite_diff_gradient(
                |th| crate::model::log_likelihood(&obs, &model, th).unwrap(),
                &theta,
                &steps,
            )
            .unwrap();
            let rel = (&fd - &psi).norm() / psi.norm();
            assert!(
                rel <= crate::tolerances::SCORE_FD_REL_TOL,
                "seed {seed}: rel {rel}"
            );
        }
    }

    #[test]
    fn fim_blocks_identity_phi_gives_h_2ata() {
        let spec = RandomModelSpec {
            n_ambient: 5,
            n_measurements: 5,
            identity_phi: true,
            noise_power: 1.0,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 21);
        let blocks = fim_blocks(&model).unwrap();
        let a = model.signal_matrix();
        let expected = (a.adjoint() * &a).scale(2.0);
        assert!((blocks.h() - &expected).norm() <= 1e-12 * expected.norm());
    }

    #[test]
    fn fim_blocks_zero_amplitudes_kill_delta_gamma() {
        let mut model = random_model(&RandomModelSpec::default(), 31);
        let zero = SnapshotSet::new(DMatrix::from_element(
            model.n_sources(),
            model.n_snapshots(),
            cplx(0.0, 0.0),
        ))
        .unwrap();
        // rebuild with zero amplitudes
        model = crate::model::ModelInstance::new(
            model.family().clone(),
            model.omega().clone(),
            zero,
            model.scheme().clone(),
        )
        .unwrap();
        let blocks = fim_blocks(&model).unwrap();
        for delta in blocks.deltas() {
            assert_eq!(delta.norm(), 0.0);
        }
        assert_eq!(blocks.gamma().norm(), 0.0);
    }

    #[test]
    fn assemble_scalar_blocks() {
        let h = DMatrix::from_element(1, 1, cplx(3.0, 0.0));
        let delta = DMatrix::from_element(1, 1, cplx(0.5, 0.0));
        let gamma = DMatrix::from_element(1, 1, 4.0);
        let blocks = FimBlocks {
            h,
            deltas: vec![delta],
            gamma,
        };
        let full = assemble_full_fim(&blocks);
        let expected =
            DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.5, 0.0, 3.0, 0.0, 0.5, 0.0, 4.0]);
        assert_eq!(full.matrix(), &expected);
    }

    #[test]
    fn assembled_fim_is_symmetric_and_psd() {
        for seed in 0..5u64 {
            let model = random_model(&RandomModelSpec::default(), 300 + seed);
            let full = assemble_full_fim(&fim_blocks(&model).unwrap());
            let m = full.matrix();
            let asym = (m - m.transpose()).norm();
            assert!(asym <= crate::tolerances::FIM_SYMMETRY_TOL * m.norm());
            let min_eig = m.symmetric_eigenvalues().min();
            assert!(min_eig >= -crate::tolerances::PSD_EIG_TOL * m.norm());
        }
    }

    #[test]
    fn schur_scalar_case() {
        let blocks = FimBlocks {
            h: DMatrix::from_element(1, 1, cplx(2.0, 0.0)),
            deltas: vec![DMatrix::from_element(1, 1, cplx(0.6, 0.0))],
            gamma: DMatrix::from_element(1, 1, 5.0),
        };
        let s = schur_complement(&blocks).unwrap();
        assert_relative_eq!(s[(0, 0)], 5.0 - 0.6 * 0.6 / 2.0, max_relative = 1e-14);
        let crb = crb_omega_via_schur(&blocks).unwrap();
        assert_relative_eq!(
            crb.bounded().unwrap()[(0, 0)],
            1.0 / (5.0 - 0.18),
            max_relative = 1e-14
        );
    }

    #[test]
    fn schur_decoupled_gives_gamma_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = linalg::symmetric_part(&(&g * g.transpose())) + DMatrix::identity(3, 3);
        let blocks = FimBlocks {
            h: DMatrix::identity(2, 2).map(|x| cplx(x, 0.0)),
            deltas: vec![DMatrix::zeros(2, 3), DMatrix::zeros(2, 3)],
            gamma: gamma.clone(),
        };
        let crb = crb_omega_via_schur(&blocks).unwrap();
        let expected = gamma.try_inverse().unwrap();
        assert!(relative_frobenius_error(crb.bounded().unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn closed_form_matches_schur() {
        for seed in 0..8u64 {
            let model = random_model(&RandomModelSpec::default(), 400 + seed);
            let blocks = fim_blocks(&model).unwrap();
            let direct = crb_omega_closed_form(&model).unwrap();
            let schur = crb_omega_via_schur(&blocks).unwrap();
            let rel = relative_frobenius_error(direct.bounded().unwrap(), schur.bounded().unwrap());
            assert!(
                rel <= crate::tolerances::SCHUR_DIRECT_REL_TOL,
                "seed {seed}: {rel}"
            );
        }
    }

    #[test]
    fn schur_matches_full_inverse_corner() {
        for seed in 0..5u64 {
            let model = random_model(&RandomModelSpec::default(), 500 + seed);
            let blocks = fim_blocks(&model).unwrap();
            let schur = crb_omega_via_schur(&blocks).unwrap();
            let full = assemble_full_fim(&blocks);
            let inv = full.matrix().clone().try_inverse().unwrap();
            let om = full.layout().omega_range();
            let corner = inv
                .view((om.start, om.start), (model.n_params(), model.n_params()))
                .into_owned();
            let rel = relative_frobenius_error(schur.bounded().unwrap(), &corner);
            assert!(rel <= 1e-8, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn square_full_rank_b_yields_singular_verdict() {
        // N_y = K with invertible B: the projector annihilates everything
        let spec = RandomModelSpec {
            n_measurements: 2,
            n_sources: 2,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 61);
        let result = crb_omega_closed_form(&model).unwrap();
        let info = result.crb_omega.singular_info().expect("must be singular");
        assert_eq!(info.matrix, "CRB^{-1}(Omega)");
        // the accumulated CRB^{-1} is numerically the zero matrix: rank 0
        // against the Gamma scale, norm far below it
        assert_eq!(info.rank, 0);
        let blocks = fim_blocks(&model).unwrap();
        assert!(info.min_singular_value <= 1e-10 * blocks.gamma().norm());
    }

    #[test]
    fn zero_parameter_model_has_trivial_omega_bound() {
        let spec = RandomModelSpec {
            n_params: 0,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 62);
        let result = crb_omega_closed_form(&model).unwrap();
        let crb = result.bounded().expect("0x0 information is invertible");
        assert_eq!(crb.nrows(), 0);
        assert_eq!(result.per_param_variance.as_ref().unwrap().len(), 0);
    }

    #[test]
    fn classical_doa_crb_recovered_for_identity_phi() {
        let spec = RandomModelSpec {
            n_ambient: 6,
            n_measurements: 6,
            identity_phi: true,
            noise_power: 0.4,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 71);
        let crb = crb_omega_closed_form(&model).unwrap();

        // classical conditional-model formula (2/sigma^2) [sum Re{D^H P D}]^{-1}
        let a = model.signal_matrix();
        let proj = DMatrix::<Complex64>::identity(6, 6)
            - &a * (a.adjoint() * &a).try_inverse().unwrap() * a.adjoint();
        let mut acc = DMatrix::<f64>::zeros(model.n_params(), model.n_params());
        for t in 0..model.n_snapshots() {
            let d = build_d(
                model.family(),
                model.omega(),
                &model.snapshots().snapshot(t),
            )
            .unwrap();
            acc += linalg::real_part(&(d.adjoint() * &proj * d));
        }
        let classical = (acc.scale(2.0 / model.scheme().noise_power()))
            .try_inverse()
            .unwrap();
        let rel = relative_frobenius_error(crb.bounded().unwrap(), &classical);
        assert!(rel <= crate::tolerances::CLASSICAL_REDUCTION_TOL, "{rel}");
    }

    #[test]
    fn projector_is_idempotent_and_annihilates_b() {
        let model = random_model(&RandomModelSpec::default(), 88);
        let pre = precompute(&model).unwrap();
        let n_y = model.n_measurements();
        let rinv_b = pre.r_solver.solve_complex(&pre.b);
        let h_inner = linalg::hermitian_part(&(pre.b.adjoint() * &rinv_b));
        let proj = DMatrix::<Complex64>::identity(n_y, n_y)
            - &pre.b * h_inner.try_inverse().unwrap() * rinv_b.adjoint();
        let idem = (&proj * &proj - &proj).norm() / proj.norm();
        assert!(idem <= crate::tolerances::PROJECTOR_TOL);
        let annihilate = (&proj * &pre.b).norm() / pre.b.norm();
        assert!(annihilate <= crate::tolerances::PROJECTOR_TOL);
    }

    #[test]
    fn signal_jacobian_single_snapshot_layout() {
        let spec = RandomModelSpec {
            n_snapshots: 1,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 91);
        let j = signal_jacobian(&model, 0).unwrap();
        let a = model.signal_matrix();
        let k = model.n_sources();
        assert_eq!(
            j.view((0, 0), (model.n_ambient(), k)),
            a.view((0, 0), (model.n_ambient(), k))
        );
        let ja = j.view((0, k), (model.n_ambient(), k)).into_owned();
        assert!((ja - a.map(|z| z * cplx(0.0, 1.0))).norm() == 0.0);
        let d = build_d(
            model.family(),
            model.omega(),
            &model.snapshots().snapshot(0),
        )
        .unwrap();
        assert_eq!(
            j.view((0, 2 * k), (model.n_ambient(), model.n_params()))
                .into_owned(),
            d
        );
    }

    #[test]
    fn signal_jacobian_other_snapshots_zero() {
        let model = random_model(&RandomModelSpec::default(), 92);
        let layout = model.layout();
        let j = signal_jacobian(&model, 1).unwrap();
        for t in 0..layout.n_snapshots {
            if t == 1 {
                continue;
            }
            let re = layout.re_range(t);
            let block = j.view((0, re.start), (model.n_ambient(), 2 * layout.n_sources));
            assert_eq!(block.norm(), 0.0);
        }
    }

    #[test]
    fn signal_jacobian_matches_finite_differences() {
        let model = random_model(&RandomModelSpec::default(), 93);
        let theta = model.theta();
        let t = 1usize;
        let j = signal_jacobian(&model, t).unwrap();

        let x_of = |th: &ParameterVector| -> DVector<Complex64> {
            let (snaps, omega) = th.split();
            model.family().evaluate(&omega) * snaps.snapshot(t)
        };
        let mut fd = DMatrix::<Complex64>::zeros(model.n_ambient(), theta.len());
        for i in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta.data()[i].abs());
            let xp = x_of(&theta.perturbed(i, h));
            let xm = x_of(&theta.perturbed(i, -h));
            fd.set_column(i, &((xp - xm) / cplx(2.0 * h, 0.0)));
        }
        let rel = (&fd - &j).norm() / j.norm();
        assert!(rel <= 1e-5, "{rel}");
    }

    #[test]
    fn signal_trace_is_real_nonnegative_and_matches_inverse_path() {
        let model = random_model(&RandomModelSpec::default(), 94);
        let blocks = fim_blocks(&model).unwrap();
        let full = assemble_full_fim(&blocks);
        let inv = full.matrix().clone().try_inverse().unwrap();
        for t in 0..model.n_snapshots() {
            let trace = signal_crb_trace(&model, t).unwrap();
            assert!(trace >= 0.0);
            let j = signal_jacobian(&model, t).unwrap();
            let oracle = (&j * linalg::to_complex(&inv) * j.adjoint()).trace();
            assert!(oracle.im.abs() <= 1e-10 * oracle.re.abs());
            let rel = (trace - oracle.re).abs() / oracle.re.abs();
            assert!(rel <= crate::tolerances::TRACE_PATH_REL_TOL, "{rel}");
        }
    }

    #[test]
    fn signal_trace_reduces_to_amplitude_model_when_p_zero() {
        // P = 0 variant: Omega known, FIM is the amplitude block alone
        let base = random_model(&RandomModelSpec::default(), 95);
        let a = base.signal_matrix();
        let (rows, cols) = (a.nrows(), a.ncols());
        let a2 = a.clone();
        let family0 =
            ParametricMatrixFamily::new(rows, cols, 0, move |_| a.clone(), move |_, _| a2.clone());
        let model0 = crate::model::ModelInstance::new(
            family0,
            DVector::zeros(0),
            base.snapshots().clone(),
            base.scheme().clone(),
        )
        .unwrap();
        let t = 0usize;
        let trace = signal_crb_trace(&model0, t).unwrap();

        // independent reduced oracle: Tr{[A, jA] T_t^{-1} [A, jA]^H} with
        // T_t the per-snapshot real form of H
        let blocks = fim_blocks(&model0).unwrap();
        let k = model0.n_sources();
        let h_re = linalg::real_part(blocks.h());
        let h_im = linalg::imag_part(blocks.h());
        let mut t_block = DMatrix::<f64>::zeros(2 * k, 2 * k);
        t_block.view_mut((0, 0), (k, k)).copy_from(&h_re);
        t_block.view_mut((0, k), (k, k)).copy_from(&(-&h_im));
        t_block.view_mut((k, 0), (k, k)).copy_from(&h_im);
        t_block.view_mut((k, k), (k, k)).copy_from(&h_re);
        let a = model0.signal_matrix();
        let mut aja = DMatrix::<Complex64>::zeros(model0.n_ambient(), 2 * k);
        aja.view_mut((0, 0), (model0.n_ambient(), k)).copy_from(&a);
        aja.view_mut((0, k), (model0.n_ambient(), k))
            .copy_from(&a.map(|z| z * cplx(0.0, 1.0)));
        let oracle = (&aja * linalg::to_complex(&t_block.try_inverse().unwrap()) * aja.adjoint())
            .trace()
            .re;
        assert_relative_eq!(trace, oracle, max_relative = 1e-8);
    }

    #[test]
    fn crb_invariant_under_invertible_left_transform() {
        let model = random_model(&RandomModelSpec::default(), 96);
        let base = crb_omega_closed_form(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n_y = model.n_measurements();
        for _ in 0..3 {
            let m = DMatrix::from_fn(n_y, n_y, |_, _| rng.sample::<f64, _>(StandardNormal))
                + DMatrix::identity(n_y, n_y) * 2.0;
            let phi2 = &m * model.scheme().phi();
            let scheme2 = MeasurementScheme::new(phi2, model.scheme().noise_power()).unwrap();
            let model2 = crate::model::ModelInstance::new(
                model.family().clone(),
                model.omega().clone(),
                model.snapshots().clone(),
                scheme2,
            )
            .unwrap();
            let transformed = crb_omega_closed_form(&model2).unwrap();
            let rel =
                relative_frobenius_error(transformed.bounded().unwrap(), base.bounded().unwrap());
            assert!(rel <= crate::tolerances::SENSING_INVARIANCE_TOL, "{rel}");
        }
    }

    #[test]
    fn row_removal_never_improves_crb() {
        let spec = RandomModelSpec {
            n_ambient: 8,
            n_measurements: 6,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 97);
        let crb_full = crb_omega_closed_form(&model).unwrap();
        let phi = model.scheme().phi();
        let reduced = phi
            .view((0, 0), (phi.nrows() - 1, phi.ncols()))
            .into_owned();
        let scheme2 = MeasurementScheme::new(reduced, model.scheme().noise_power()).unwrap();
        let model2 = crate::model::ModelInstance::new(
            model.family().clone(),
            model.omega().clone(),
            model.snapshots().clone(),
            scheme2,
        )
        .unwrap();
        let crb_red = crb_omega_closed_form(&model2).unwrap();
        let diff = crb_red.bounded().unwrap() - crb_full.bounded().unwrap();
        let min_eig = diff.symmetric_eigenvalues().min();
        assert!(
            min_eig >= -crate::tolerances::NESTED_MONOTONE_EIG_TOL * diff.norm().max(1e-30),
            "min eig {min_eig}"
        );
    }

    #[test]
    fn outer_product_identities_hold() {
        // Re(p)Re(q^T) = (Re(pq^T) + Re(pq^H)) / 2 and the Im/cross variants
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let p = random_complex_matrix(&mut rng, 3, 1);
            let q = random_complex_matrix(&mut rng, 3, 1);
            let pqt = &p * q.transpose();
            let pqh = &p * q.adjoint();
            let re_re = linalg::real_part(&p.clone()) * linalg::real_part(&q.clone()).transpose();
            let im_im = linalg::imag_part(&p.clone()) * linalg::imag_part(&q.clone()).transpose();
            let re_im = linalg::real_part(&p.clone()) * linalg::imag_part(&q.clone()).transpose();
            let lhs1 = (linalg::real_part(&pqt) + linalg::real_part(&pqh)).scale(0.5);
            let lhs2 = (linalg::real_part(&pqt) - linalg::real_part(&pqh)).scale(-0.5);
            let lhs3 = (linalg::imag_part(&pqt) - linalg::imag_part(&pqh)).scale(0.5);
            let tol = crate::tolerances::COMPLEX_IDENTITY_TOL;
            assert!((re_re - lhs1).amax() <= tol);
            assert!((im_im - lhs2).amax() <= tol);
            assert!((re_im - lhs3).amax() <= tol);
        }
    }

    #[test]
    fn theta_assembly_helpers_are_consistent() {
        // cross-module guard: fim indexing and model layout must agree
        let model = random_model(&RandomModelSpec::default(), 98);
        let theta = assemble_theta(model.snapshots(), model.omega());
        assert_eq!(theta.layout(), model.layout());
    }
}
