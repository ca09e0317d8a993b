//! Low-rank signal model: structured matrix family, snapshot amplitudes,
//! compression scheme, data generation, and log-likelihood.
//!
//! The observation model is
//!
//! ```text
//! y(t) = Phi * ( A(Omega) d(t) + w(t) ),    t = 1..N
//! ```
//!
//! where `A(Omega)` is a tall complex `N_x x K` matrix with a known structure
//! depending on `P` real parameters, `d(t)` are unknown complex amplitudes,
//! `Phi` is a real `N_y x N_x` measurement matrix with `N_y <= N_x`, and
//! `w(t)` is circularly-symmetric complex Gaussian noise with power `sigma^2`
//! per entry. The compressed noise `n(t) = Phi w(t)` has covariance
//! `R = sigma^2 Phi Phi^T`.
//!
//! The real parameter vector is laid out snapshot-interleaved:
//!
//! ```text
//! theta = [Re d(1); Im d(1); ...; Re d(N); Im d(N); Omega]
//! ```
//!
//! All FIM and CRB indexing in this crate goes through [`ThetaLayout`], the
//! single source of truth for that layout.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CrbError;
use crate::linalg::{self, SpdSolver};
use crate::singularity::numerical_rank;

type EvalFn = dyn Fn(&DVector<f64>) -> DMatrix<Complex64> + Send + Sync;
type DerivFn = dyn Fn(&DVector<f64>, usize) -> DMatrix<Complex64> + Send + Sync;

/// A structured complex matrix `A(Omega)` together with its analytic
/// parameter derivatives `dA/d omega_p`.
///
/// The closures must return `n_rows x n_cols` matrices; both accessors
/// enforce this. Derivative consistency with the evaluation map is a
/// testable contract checked by `oracle::check_family_derivative`.
#[derive(Clone)]
pub struct ParametricMatrixFamily {
    n_rows: usize,
    n_cols: usize,
    n_params: usize,
    evaluate: Arc<EvalFn>,
    derivative: Arc<DerivFn>,
}

impl ParametricMatrixFamily {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        n_params: usize,
        evaluate: impl Fn(&DVector<f64>) -> DMatrix<Complex64> + Send + Sync + 'static,
        derivative: impl Fn(&DVector<f64>, usize) -> DMatrix<Complex64> + Send + Sync + 'static,
    ) -> Self {
        assert!(
            n_rows > 0 && n_cols > 0,
            "family dimensions must be positive"
        );
        Self {
            n_rows,
            n_cols,
            n_params,
            evaluate: Arc::new(evaluate),
            derivative: Arc::new(derivative),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// `A(Omega)`.
    pub fn evaluate(&self, omega: &DVector<f64>) -> DMatrix<Complex64> {
        assert_eq!(omega.len(), self.n_params, "omega length != n_params");
        let m = (self.evaluate)(omega);
        assert_eq!(
            (m.nrows(), m.ncols()),
            (self.n_rows, self.n_cols),
            "family evaluate returned a wrongly shaped matrix"
        );
        m
    }

    /// `dA/d omega_p`.
    pub fn derivative(&self, omega: &DVector<f64>, p: usize) -> DMatrix<Complex64> {
        assert_eq!(omega.len(), self.n_params, "omega length != n_params");
        assert!(p < self.n_params, "parameter index out of range");
        let m = (self.derivative)(omega, p);
        assert_eq!(
            (m.nrows(), m.ncols()),
            (self.n_rows, self.n_cols),
            "family derivative returned a wrongly shaped matrix"
        );
        m
    }
}

impl fmt::Debug for ParametricMatrixFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricMatrixFamily")
            .field("n_rows", &self.n_rows)
            .field("n_cols", &self.n_cols)
            .field("n_params", &self.n_params)
            .finish()
    }
}

/// The complex source amplitudes, one `K`-vector per snapshot (column `t`
/// is `d(t)`).
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    amplitudes: DMatrix<Complex64>,
}

impl SnapshotSet {
    pub fn new(amplitudes: DMatrix<Complex64>) -> Result<Self, CrbError> {
        if amplitudes.nrows() == 0 || amplitudes.ncols() == 0 {
            return Err(CrbError::InvalidConfig(
                "snapshot set needs at least one source and one snapshot".into(),
            ));
        }
        Ok(Self { amplitudes })
    }

    pub fn n_sources(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn amplitudes(&self) -> &DMatrix<Complex64> {
        &self.amplitudes
    }

    /// `d(t)` for 0-based snapshot index `t`.
    pub fn snapshot(&self, t: usize) -> DVector<Complex64> {
        self.amplitudes.column(t).into_owned()
    }
}

/// Real compression matrix `Phi` plus the noise power `sigma^2`.
///
/// Construction checks `N_y <= N_x`, a positive finite noise power, and full
/// row rank of `Phi` so that `R = sigma^2 Phi Phi^T` is invertible; every
/// downstream bound computation relies on `R^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementScheme {
    phi: DMatrix<f64>,
    noise_power: f64,
}

impl MeasurementScheme {
    pub fn new(phi: DMatrix<f64>, noise_power: f64) -> Result<Self, CrbError> {
        if !(noise_power.is_finite() && noise_power > 0.0) {
            return Err(CrbError::InvalidNoisePower(noise_power));
        }
        let (n_y, n_x) = (phi.nrows(), phi.ncols());
        if n_y == 0 || n_y > n_x {
            return Err(CrbError::DimensionMismatch {
                context: "measurement scheme",
                expected: "1 <= N_y <= N_x".into(),
                actual: format!("N_y = {n_y}, N_x = {n_x}"),
            });
        }
        let rank = numerical_rank(&phi, None);
        if rank < n_y {
            let sv = phi.singular_values();
            return Err(CrbError::SingularMatrix {
                name: "Phi (row space)",
                dim: n_y,
                rank,
                min_singular_value: sv.min(),
            });
        }
        Ok(Self { phi, noise_power })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    /// `N_y`, the compressed sample count.
    pub fn n_measurements(&self) -> usize {
        self.phi.nrows()
    }

    /// `N_x`, the ambient dimension.
    pub fn n_inputs(&self) -> usize {
        self.phi.ncols()
    }

    /// `R = sigma^2 Phi Phi^T`, symmetrized exactly.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let r = (&self.phi * self.phi.transpose()).scale(self.noise_power);
        linalg::symmetric_part(&r)
    }
}

/// Index layout of the real parameter vector
/// `[Re d(1); Im d(1); ...; Re d(N); Im d(N); Omega]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n_sources: usize,
    pub n_snapshots: usize,
    pub n_params: usize,
}

impl ThetaLayout {
    pub fn len(&self) -> usize {
        2 * self.n_snapshots * self.n_sources + self.n_params
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices of `Re d(t)`, 0-based `t`.
    pub fn re_range(&self, t: usize) -> Range<usize> {
        let start = 2 * self.n_sources * t;
        start..start + self.n_sources
    }

    /// Indices of `Im d(t)`, 0-based `t`.
    pub fn im_range(&self, t: usize) -> Range<usize> {
        let start = 2 * self.n_sources * t + self.n_sources;
        start..start + self.n_sources
    }

    /// Indices of `Omega`.
    pub fn omega_range(&self) -> Range<usize> {
        let start = 2 * self.n_sources * self.n_snapshots;
        start..start + self.n_params
    }

    /// Size of the amplitude block `2NK` (everything before `Omega`).
    pub fn amplitude_len(&self) -> usize {
        2 * self.n_snapshots * self.n_sources
    }
}

/// The real parameter vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    data: DVector<f64>,
    layout: ThetaLayout,
}

impl ParameterVector {
    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copy with entry `i` shifted by `delta`; used by finite differences.
    pub fn perturbed(&self, i: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.data[i] += delta;
        out
    }

    /// Inverse of [`assemble_theta`]: recovers `(snapshots, omega)` exactly.
    pub fn split(&self) -> (SnapshotSet, DVector<f64>) {
        let l = self.layout;
        let mut amplitudes = DMatrix::zeros(l.n_sources, l.n_snapshots);
        for t in 0..l.n_snapshots {
            let re = l.re_range(t);
            let im = l.im_range(t);
            for k in 0..l.n_sources {
                amplitudes[(k, t)] =
                    Complex64::new(self.data[re.start + k], self.data[im.start + k]);
            }
        }
        let omega = DVector::from_iterator(
            l.n_params,
            self.data
                .rows(l.omega_range().start, l.n_params)
                .iter()
                .copied(),
        );
        (SnapshotSet { amplitudes }, omega)
    }
}

/// Packs snapshot amplitudes and `Omega` into the canonical real layout.
pub fn assemble_theta(snapshots: &SnapshotSet, omega: &DVector<f64>) -> ParameterVector {
    let layout = ThetaLayout {
        n_sources: snapshots.n_sources(),
        n_snapshots: snapshots.n_snapshots(),
        n_params: omega.len(),
    };
    let mut data = DVector::zeros(layout.len());
    for t in 0..layout.n_snapshots {
        let re = layout.re_range(t);
        let im = layout.im_range(t);
        for k in 0..layout.n_sources {
            let z = snapshots.amplitudes[(k, t)];
            data[re.start + k] = z.re;
            data[im.start + k] = z.im;
        }
    }
    let om = layout.omega_range();
    for p in 0..layout.n_params {
        data[om.start + p] = omega[p];
    }
    ParameterVector { data, layout }
}

/// A complete estimation problem: family, true parameters, snapshot
/// amplitudes, and measurement scheme. Immutable after construction.
#[derive(Clone, Debug)]
pub struct ModelInstance {
    family: ParametricMatrixFamily,
    omega: DVector<f64>,
    snapshots: SnapshotSet,
    scheme: MeasurementScheme,
}

impl ModelInstance {
    pub fn new(
        family: ParametricMatrixFamily,
        omega: DVector<f64>,
        snapshots: SnapshotSet,
        scheme: MeasurementScheme,
    ) -> Result<Self, CrbError> {
        if omega.len() != family.n_params() {
            return Err(CrbError::DimensionMismatch {
                context: "model instance",
                expected: format!("omega of length {}", family.n_params()),
                actual: format!("length {}", omega.len()),
            });
        }
        if snapshots.n_sources() != family.n_cols() {
            return Err(CrbError::DimensionMismatch {
                context: "model instance",
                expected: format!("{} amplitude rows (family columns)", family.n_cols()),
                actual: format!("{}", snapshots.n_sources()),
            });
        }
        if scheme.n_inputs() != family.n_rows() {
            return Err(CrbError::DimensionMismatch {
                context: "model instance",
                expected: format!("Phi with {} columns (family rows)", family.n_rows()),
                actual: format!("{}", scheme.n_inputs()),
            });
        }
        Ok(Self {
            family,
            omega,
            snapshots,
            scheme,
        })
    }

    pub fn family(&self) -> &ParametricMatrixFamily {
        &self.family
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn snapshots(&self) -> &SnapshotSet {
        &self.snapshots
    }

    pub fn scheme(&self) -> &MeasurementScheme {
        &self.scheme
    }

    pub fn n_ambient(&self) -> usize {
        self.family.n_rows()
    }

    pub fn n_measurements(&self) -> usize {
        self.scheme.n_measurements()
    }

    pub fn n_sources(&self) -> usize {
        self.family.n_cols()
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    pub fn n_snapshots(&self) -> usize {
        self.snapshots.n_snapshots()
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            n_sources: self.n_sources(),
            n_snapshots: self.n_snapshots(),
            n_params: self.n_params(),
        }
    }

    /// `A(Omega)` at the instance's true parameters.
    pub fn signal_matrix(&self) -> DMatrix<Complex64> {
        self.family.evaluate(&self.omega)
    }

    /// `B = Phi A(Omega)` at the instance's true parameters.
    pub fn compressed_matrix(&self) -> DMatrix<Complex64> {
        linalg::to_complex(self.scheme.phi()) * self.signal_matrix()
    }

    /// The true parameter vector in canonical layout.
    pub fn theta(&self) -> ParameterVector {
        assemble_theta(&self.snapshots, &self.omega)
    }
}

/// The compressed measurements, column `t` holding `y(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    measurements: DMatrix<Complex64>,
}

impl ObservationSet {
    pub fn new(measurements: DMatrix<Complex64>) -> Self {
        Self { measurements }
    }

    pub fn measurements(&self) -> &DMatrix<Complex64> {
        &self.measurements
    }

    pub fn n_measurements(&self) -> usize {
        self.measurements.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.measurements.ncols()
    }
}

/// Draws `y(t) = Phi (A(Omega) d(t) + w(t))` with a fixed seed.
///
/// The generator is `ChaCha8Rng::seed_from_u64(seed)`. Noise is drawn
/// snapshot-by-snapshot, entry-by-entry, real part then imaginary part,
/// each part `(sigma / sqrt(2)) * N(0, 1)`, so an identical seed yields a
/// bit-identical observation set on every platform.
pub fn generate_observations(model: &ModelInstance, seed: u64) -> ObservationSet {
    let a = model.signal_matrix();
    let phi_c = linalg::to_complex(model.scheme.phi());
    let n = model.n_snapshots();
    let mut clean = DMatrix::zeros(model.n_ambient(), n);
    for t in 0..n {
        clean.set_column(t, &(&a * model.snapshots.snapshot(t)));
    }
    observations_with(&phi_c, &clean, model.scheme.noise_power(), seed)
}

/// Shared generator core: adds ambient noise to precomputed clean columns
/// `A d(t)` and compresses. The Monte-Carlo oracle reuses this with hoisted
/// operands; the noise stream is identical to [`generate_observations`].
pub(crate) fn observations_with(
    phi_c: &DMatrix<Complex64>,
    clean_ambient: &DMatrix<Complex64>,
    noise_power: f64,
    seed: u64,
) -> ObservationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = clean_ambient.nrows();
    let n = clean_ambient.ncols();
    let scale = noise_power.sqrt() / SQRT_2;

    let mut y = DMatrix::zeros(phi_c.nrows(), n);
    let mut noisy = DVector::zeros(n_x);
    for t in 0..n {
        noisy.copy_from(&clean_ambient.column(t));
        for i in 0..n_x {
            let g_re: f64 = StandardNormal.sample(&mut rng);
            let g_im: f64 = StandardNormal.sample(&mut rng);
            noisy[i] += Complex64::new(scale * g_re, scale * g_im);
        }
        y.set_column(t, &(phi_c * &noisy));
    }
    ObservationSet { measurements: y }
}

/// Log-likelihood of the observations at an arbitrary parameter vector:
///
/// ```text
/// LL = -N_y N ln(pi) - N ln|R| - sum_t (y(t) - B d(t))^H R^{-1} (y(t) - B d(t))
/// ```
///
/// `ln|R|` is evaluated as a sum of Cholesky log-pivots.
pub fn log_likelihood(
    obs: &ObservationSet,
    model: &ModelInstance,
    theta: &ParameterVector,
) -> Result<f64, CrbError> {
    if theta.layout() != model.layout() {
        return Err(CrbError::DimensionMismatch {
            context: "log_likelihood",
            expected: format!("{:?}", model.layout()),
            actual: format!("{:?}", theta.layout()),
        });
    }
    if obs.n_measurements() != model.n_measurements() || obs.n_snapshots() != model.n_snapshots() {
        return Err(CrbError::DimensionMismatch {
            context: "log_likelihood",
            expected: format!(
                "{}x{} observations",
                model.n_measurements(),
                model.n_snapshots()
            ),
            actual: format!("{}x{}", obs.n_measurements(), obs.n_snapshots()),
        });
    }

    let (snapshots, omega) = theta.split();
    let a = model.family.evaluate(&omega);
    let b = linalg::to_complex(model.scheme.phi()) * a;
    let r = model.scheme.noise_covariance();
    let solver = SpdSolver::new(&r).ok_or_else(|| singular_r_error(&r))?;

    let n = model.n_snapshots();
    let n_y = model.n_measurements();
    let mut quad = 0.0;
    for t in 0..n {
        let resid = obs.measurements.column(t) - &b * snapshots.snapshot(t);
        let solved = solver.solve_complex_vec(&resid);
        quad += resid.dotc(&solved).re;
    }
    Ok(-((n_y * n) as f64) * PI.ln() - (n as f64) * solver.log_det() - quad)
}

pub(crate) fn singular_r_error(r: &DMatrix<f64>) -> CrbError {
    let sv = r.singular_values();
    CrbError::SingularMatrix {
        name: "R",
        dim: r.nrows(),
        rank: numerical_rank(r, None),
        min_singular_value: sv.min(),
    }
}
