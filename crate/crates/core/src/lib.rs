//! Exact Cramér-Rao bounds for compressed low-rank signal models.
//!
//! The model is `y(t) = Phi (A(Omega) d(t) + w(t))`: a structured tall
//! matrix `A(Omega)` with `P` unknown real parameters, unknown complex
//! amplitudes `d(t)` over `N` snapshots, a real compression matrix `Phi`
//! reducing `N_x` samples to `N_y`, and circularly-symmetric complex
//! Gaussian noise. The crate computes the Fisher information of the full
//! real parameter vector, the Cramér-Rao bound for `Omega` (and for signal
//! reconstruction), and diagnoses the compression regimes in which the FIM
//! is necessarily singular.
//!
//! Modules:
//!
//! * [`model`] — signal model, parameter layout, data generation,
//!   log-likelihood.
//! * [`fim`] — analytic score, information blocks, assembled FIM, and the
//!   CRB computation paths.
//! * [`singularity`] — numerical rank, singular-FIM classification with
//!   null-vector witnesses, rank additivity.
//! * [`doa`] — uniform-linear-array steering family (direction-of-arrival
//!   application).
//! * [`oracle`] — independent verification: Monte-Carlo empirical FIM,
//!   finite differences, multi-path CRB cross-checks.
//! * [`experiment`] — compression-sweep runner with CSV/SVG/manifest
//!   emission.
//! * [`tolerances`] — the single table of numerical thresholds.
//!
//! ```
//! use lowrank_crb::{doa, experiment, fim};
//!
//! // CRB for the bundled demonstration scenario at N_y = 20
//! let config = experiment::ExperimentConfig::default_scenario();
//! let model = experiment::build_model_at(&config, 20).unwrap();
//! let crb = fim::crb_omega_closed_form(&model).unwrap();
//! assert!(crb.bounded().is_some());
//! ```

pub mod doa;
pub mod error;
pub mod experiment;
pub mod fim;
mod linalg;
pub mod model;
pub mod oracle;
mod plot;
pub mod singularity;
pub mod tolerances;

pub use error::CrbError;
