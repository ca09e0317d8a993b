//! Fisher-information singularity diagnostics.
//!
//! When the number of compressed samples does not exceed the number of
//! sources (`N_y <= K`), the FIM of the full parameter vector is singular
//! and no unbiased estimator of all parameters has finite variance. Two
//! mechanisms apply:
//!
//! * `N_y < K` (or any rank-deficient `B`): `H = 2 B^H R^{-1} B` has a null
//!   vector `u`, and embedding `[Re u; Im u]` into one snapshot's amplitude
//!   block gives an explicit FIM null vector.
//! * `N_y = K` with full-rank `B`: `B` is square invertible, the projector
//!   `I - B (B^H R^{-1} B)^{-1} B^H R^{-1}` vanishes, so the Schur
//!   complement of the amplitude block is the zero matrix and
//!   `rank I = rank T < dim`.
//!
//! Having more samples than sources does not by itself guarantee a
//! nonsingular FIM, so the non-singular classification is deliberately
//! named a *candidate*.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::CrbError;
use crate::fim::{assemble_full_fim, fim_blocks, schur_complement, FimBlocks};
use crate::model::ModelInstance;

/// Relative singular-value cutoff `max(rows, cols) * eps` used by
/// [`numerical_rank`] when no tolerance is supplied.
pub fn default_rank_tolerance(nrows: usize, ncols: usize) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON
}

/// Counts singular values above `tol * sigma_max`. `tol` defaults to
/// [`default_rank_tolerance`].
pub fn numerical_rank<T>(matrix: &DMatrix<T>, tol: Option<f64>) -> usize
where
    T: ComplexField<RealField = f64>,
{
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return 0;
    }
    let sv = matrix.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let rel = tol.unwrap_or_else(|| default_rank_tolerance(matrix.nrows(), matrix.ncols()));
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// Classification outcome for the assembled FIM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerdictKind {
    /// `B` is rank-deficient (in particular whenever `N_y < K`); the FIM
    /// has an explicit null vector supported on one amplitude block.
    UndersampledRankDeficientB,
    /// `N_y = K` with full-rank `B`: the Schur complement of the amplitude
    /// block vanishes and the FIM rank collapses to the amplitude rank.
    SquareFullRankB,
    /// No structural singularity detected. This does not certify
    /// nonsingularity.
    NonsingularCandidate,
}

impl std::fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictKind::UndersampledRankDeficientB => "UndersampledRankDeficientB",
            VerdictKind::SquareFullRankB => "SquareFullRankB",
            VerdictKind::NonsingularCandidate => "NonsingularCandidate",
        };
        f.write_str(s)
    }
}

/// Singularity verdict with rank evidence and, for singular kinds, an
/// explicit null-vector witness `v` with `v^T I v ~ 0`.
#[derive(Clone, Debug)]
pub struct SingularityVerdict {
    pub kind: VerdictKind,
    pub rank_b: usize,
    pub rank_full_fim: usize,
    pub min_eigenvalue: f64,
    pub witness: Option<DVector<f64>>,
}

/// Classifies the FIM of a model instance and, when singularity is
/// structural, constructs the witness vector.
pub fn classify_fim(model: &ModelInstance) -> Result<SingularityVerdict, CrbError> {
    let b = model.compressed_matrix();
    let rank_b = numerical_rank(&b, None);
    let k = model.n_sources();
    let n_y = model.n_measurements();

    let blocks = fim_blocks(model)?;
    let full = assemble_full_fim(&blocks);
    let rank_full_fim = numerical_rank(full.matrix(), None);
    let min_eigenvalue = full.matrix().symmetric_eigenvalues().min();

    let (kind, witness) = if rank_b < k {
        (
            VerdictKind::UndersampledRankDeficientB,
            Some(null_embedding_witness(&blocks, model)),
        )
    } else if n_y == k && model.n_params() > 0 {
        (
            VerdictKind::SquareFullRankB,
            schur_zero_witness(&blocks, model),
        )
    } else {
        (VerdictKind::NonsingularCandidate, None)
    };

    Ok(SingularityVerdict {
        kind,
        rank_b,
        rank_full_fim,
        min_eigenvalue,
        witness,
    })
}

/// Witness for rank-deficient `B`: take a null eigenvector `u` of `H` and
/// embed `[Re u; Im u]` at the first snapshot's amplitude block.
fn null_embedding_witness(blocks: &FimBlocks, model: &ModelInstance) -> DVector<f64> {
    let eig = SymmetricEigen::new(blocks.h().clone());
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("H is at least 1x1");
    let u = eig.eigenvectors.column(min_idx);

    let layout = model.layout();
    let mut v = DVector::zeros(layout.len());
    let re = layout.re_range(0).start;
    let im = layout.im_range(0).start;
    for j in 0..layout.n_sources {
        v[re + j] = u[j].re;
        v[im + j] = u[j].im;
    }
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

/// Witness for the square full-rank case: with the Schur complement equal
/// to zero, `v = [-T^{-1} B_border z; z]` is a null vector for any `z`; we
/// use `z = e_1`. The per-snapshot amplitude part solves `H w_t = Delta_t z`
/// in complex form.
fn schur_zero_witness(blocks: &FimBlocks, model: &ModelInstance) -> Option<DVector<f64>> {
    let layout = model.layout();
    if layout.n_params == 0 {
        return None;
    }
    let chol = nalgebra::Cholesky::new(blocks.h().clone())?;
    let mut z = DVector::<Complex64>::zeros(layout.n_params);
    z[0] = Complex64::new(1.0, 0.0);

    let mut v = DVector::zeros(layout.len());
    for t in 0..layout.n_snapshots {
        let rhs = blocks.deltas()[t].clone() * &z;
        let w = chol.solve(&rhs);
        let re = layout.re_range(t).start;
        let im = layout.im_range(t).start;
        for j in 0..layout.n_sources {
            v[re + j] = -w[j].re;
            v[im + j] = -w[j].im;
        }
    }
    v[layout.omega_range().start] = 1.0;
    let norm = v.norm();
    v /= norm;
    Some(v)
}

/// Result of the rank-additivity decomposition
/// `rank I = rank T + rank (I/T)` with `T` the amplitude block and `I/T`
/// its Schur complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankAdditivityReport {
    pub rank_full_fim: usize,
    pub rank_t: usize,
    pub rank_schur_complement: usize,
    pub holds: bool,
}

/// Checks rank additivity for the model's FIM. Requires invertible `H`
/// (otherwise `T` is singular and the decomposition does not apply, which
/// is reported as a `SingularMatrix` error for `H`).
///
/// All three ranks are measured against one absolute cutoff derived from
/// the full FIM, `max(dim) * eps * sigma_max(I)`; the Schur complement of a
/// singular configuration is round-off noise whose own largest singular
/// value would otherwise make it look full-rank.
pub fn rank_additivity_check(model: &ModelInstance) -> Result<RankAdditivityReport, CrbError> {
    let blocks = fim_blocks(model)?;
    let schur = match schur_complement(&blocks) {
        Ok(s) => s,
        Err(info) => {
            return Err(CrbError::SingularMatrix {
                name: "H",
                dim: info.dim,
                rank: info.rank,
                min_singular_value: info.min_singular_value,
            })
        }
    };
    let full = assemble_full_fim(&blocks);
    let dim = full.dim();
    let sv_full = full.matrix().clone().singular_values();
    let cutoff = default_rank_tolerance(dim, dim) * sv_full.max();

    let count_above = |m: &DMatrix<f64>| -> usize {
        if m.nrows() == 0 {
            return 0;
        }
        m.clone()
            .singular_values()
            .iter()
            .filter(|&&s| s > cutoff)
            .count()
    };

    let rank_full_fim = sv_full.iter().filter(|&&s| s > cutoff).count();
    let rank_t = count_above(&full.amplitude_block());
    let rank_schur_complement = count_above(&schur);

    Ok(RankAdditivityReport {
        rank_full_fim,
        rank_t,
        rank_schur_complement,
        holds: rank_full_fim == rank_t + rank_schur_complement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fim;
    use crate::linalg;
    use crate::oracle::{random_model, RandomModelSpec};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rank_of_identity() {
        assert_eq!(numerical_rank(&DMatrix::<f64>::identity(5, 5), None), 5);
    }

    #[test]
    fn rank_of_outer_product() {
        let u = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = nalgebra::DVector::from_vec(vec![0.3, 4.0]);
        let m = &u * v.transpose();
        assert_eq!(numerical_rank(&m, None), 1);
    }

    #[test]
    fn rank_with_duplicated_columns() {
        // 6x4 with one column duplicated: 3 independent columns remain
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = DMatrix::from_fn(6, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c0 = m.column(0).into_owned();
        m.set_column(3, &c0);
        assert_eq!(numerical_rank(&m, None), 3);

        // both remaining columns duplicated as well: rank 2
        let c1 = m.column(1).into_owned();
        m.set_column(2, &c1);
        assert_eq!(numerical_rank(&m, None), 2);
    }

    #[test]
    fn undersampled_model_gets_witness() {
        let spec = RandomModelSpec {
            n_sources: 3,
            n_measurements: 2,
            n_params: 2,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 41);
        let verdict = classify_fim(&model).unwrap();
        assert_eq!(verdict.kind, VerdictKind::UndersampledRankDeficientB);
        assert!(verdict.rank_b < model.n_sources());

        let full = assemble_full_fim(&fim::fim_blocks(&model).unwrap());
        let v = verdict.witness.as_ref().unwrap();
        let quad = (v.transpose() * full.matrix() * v)[(0, 0)];
        let bound = 1e-10 * full.matrix().norm() * v.norm_squared();
        assert!(quad.abs() <= bound, "quad {quad} bound {bound}");
        assert!(verdict.min_eigenvalue <= 1e-10 * full.matrix().norm());
    }

    #[test]
    fn square_full_rank_b_detected() {
        let spec = RandomModelSpec {
            n_sources: 2,
            n_measurements: 2,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 42);
        let verdict = classify_fim(&model).unwrap();
        assert_eq!(verdict.kind, VerdictKind::SquareFullRankB);

        let full = assemble_full_fim(&fim::fim_blocks(&model).unwrap());
        let v = verdict.witness.as_ref().unwrap();
        let quad = (v.transpose() * full.matrix() * v)[(0, 0)];
        assert!(quad.abs() <= 1e-10 * full.matrix().norm() * v.norm_squared());

        let report = rank_additivity_check(&model).unwrap();
        assert_eq!(report.rank_schur_complement, 0);
        assert_eq!(report.rank_full_fim, report.rank_t);
        assert!(report.holds);
        assert_eq!(report.rank_t, model.layout().amplitude_len());
    }

    #[test]
    fn well_conditioned_model_is_candidate_with_full_rank() {
        let model = random_model(&RandomModelSpec::default(), 43);
        let verdict = classify_fim(&model).unwrap();
        assert_eq!(verdict.kind, VerdictKind::NonsingularCandidate);
        assert!(verdict.witness.is_none());
        let report = rank_additivity_check(&model).unwrap();
        assert_eq!(report.rank_full_fim, model.layout().len());
        assert!(report.holds);
    }

    #[test]
    fn rank_additivity_trivial_when_p_zero() {
        let spec = RandomModelSpec {
            n_params: 0,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 44);
        let report = rank_additivity_check(&model).unwrap();
        assert_eq!(report.rank_schur_complement, 0);
        assert_eq!(report.rank_full_fim, report.rank_t);
        assert!(report.holds);
    }

    #[test]
    fn rank_additivity_inapplicable_for_singular_h() {
        let spec = RandomModelSpec {
            n_sources: 3,
            n_measurements: 2,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 45);
        assert!(matches!(
            rank_additivity_check(&model),
            Err(CrbError::SingularMatrix { name: "H", .. })
        ));
    }

    #[test]
    fn real_block_embedding_of_null_vector() {
        // [[Re H, -Im H],[Im H, Re H]] [Re u; Im u] = 0 for any H u = 0
        let spec = RandomModelSpec {
            n_sources: 4,
            n_measurements: 2,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, 46);
        let blocks = fim::fim_blocks(&model).unwrap();
        let eig = SymmetricEigen::new(blocks.h().clone());
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let u = eig.eigenvectors.column(idx).into_owned();

        let k = model.n_sources();
        let h_re = linalg::real_part(blocks.h());
        let h_im = linalg::imag_part(blocks.h());
        let mut t_block = DMatrix::<f64>::zeros(2 * k, 2 * k);
        t_block.view_mut((0, 0), (k, k)).copy_from(&h_re);
        t_block.view_mut((0, k), (k, k)).copy_from(&(-&h_im));
        t_block.view_mut((k, 0), (k, k)).copy_from(&h_im);
        t_block.view_mut((k, k), (k, k)).copy_from(&h_re);

        let mut ru = nalgebra::DVector::<f64>::zeros(2 * k);
        for j in 0..k {
            ru[j] = u[j].re;
            ru[k + j] = u[j].im;
        }
        let out = &t_block * ru;
        assert!(out.norm() <= 1e-12 * blocks.h().norm());
    }

    #[test]
    fn all_undersampled_instances_are_singular() {
        for seed in 0..10u64 {
            let spec = RandomModelSpec {
                n_sources: 3,
                n_measurements: 2,
                n_params: 2,
                ..RandomModelSpec::default()
            };
            let model = random_model(&spec, 4600 + seed);
            let verdict = classify_fim(&model).unwrap();
            assert_ne!(verdict.kind, VerdictKind::NonsingularCandidate);
            let full = assemble_full_fim(&fim::fim_blocks(&model).unwrap());
            assert!(verdict.min_eigenvalue <= 1e-10 * full.matrix().norm());
        }
    }
}
