//! Uniform-linear-array steering family for direction-of-arrival problems.
//!
//! The array response to a plane wave from direction `omega` (radians) is
//!
//! ```text
//! a(omega)_n = exp(-j 2 pi n (d/lambda) sin omega),   n = 0..N_x-1
//! ```
//!
//! with element spacing `d` and wavelength `lambda`. Stacking steering
//! columns for `K` directions yields the structured matrix `A(Omega)` with
//! `P = K` parameters, exposed as a [`ParametricMatrixFamily`] whose
//! derivative in `omega_p` has the single nonzero column
//! `c(omega_p) = da/domega` at position `p`.
//!
//! Spectral (frequency) estimation fits the same abstraction with
//! `a(omega) = [1, e^{-j omega}, ..., e^{-j (N_x-1) omega}]`; build such a
//! family directly from `ParametricMatrixFamily::new` — no separate code
//! path is needed.
//!
//! Angles are radians throughout the library; degree conversion belongs at
//! the CLI/config boundary.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::CrbError;
use crate::model::ParametricMatrixFamily;

/// Uniform linear array geometry: element count and spacing in wavelengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UlaConfig {
    n_elements: usize,
    spacing_ratio: f64,
}

impl UlaConfig {
    pub fn new(n_elements: usize, spacing_ratio: f64) -> Result<Self, CrbError> {
        if n_elements == 0 {
            return Err(CrbError::InvalidConfig(
                "array needs at least one element".into(),
            ));
        }
        if !(spacing_ratio.is_finite() && spacing_ratio > 0.0) {
            return Err(CrbError::InvalidConfig(format!(
                "spacing ratio d/lambda must be positive and finite, got {spacing_ratio}"
            )));
        }
        Ok(Self {
            n_elements,
            spacing_ratio,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }
}

/// Steering vector `a(omega)`; first entry is exactly 1, all entries have
/// unit modulus.
pub fn ula_steering(cfg: &UlaConfig, omega: f64) -> DVector<Complex64> {
    let phase = -TAU * cfg.spacing_ratio * omega.sin();
    DVector::from_fn(cfg.n_elements, |n, _| {
        Complex64::from_polar(1.0, n as f64 * phase)
    })
}

/// `c(omega) = da/domega`, entrywise
/// `(-j 2 pi n (d/lambda) cos omega) a(omega)_n`; first entry is exactly 0.
pub fn ula_steering_derivative(cfg: &UlaConfig, omega: f64) -> DVector<Complex64> {
    let a = ula_steering(cfg, omega);
    let factor = -TAU * cfg.spacing_ratio * omega.cos();
    DVector::from_fn(cfg.n_elements, |n, _| {
        Complex64::new(0.0, n as f64 * factor) * a[n]
    })
}

/// DOA family for `K` sources: `A(Omega) = [a(omega_1), ..., a(omega_K)]`
/// with `P = K`; `dA/domega_p` has `c(omega_p)` in column `p` and zeros
/// elsewhere.
pub fn build_doa_family(cfg: &UlaConfig, k: usize) -> ParametricMatrixFamily {
    assert!(k >= 1, "need at least one source");
    let cfg_eval = *cfg;
    let cfg_deriv = *cfg;
    ParametricMatrixFamily::new(
        cfg.n_elements,
        k,
        k,
        move |omega: &DVector<f64>| {
            let cols: Vec<_> = omega.iter().map(|&w| ula_steering(&cfg_eval, w)).collect();
            DMatrix::from_columns(&cols)
        },
        move |omega: &DVector<f64>, p: usize| {
            let mut m = DMatrix::zeros(cfg_deriv.n_elements, omega.len());
            m.set_column(p, &ula_steering_derivative(&cfg_deriv, omega[p]));
            m
        },
    )
}
