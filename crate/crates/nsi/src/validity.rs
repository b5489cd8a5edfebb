//! Validity screens: the pre-data-collection TrainingTreatmentTest, the
//! column-rank diagnostic, and the post-data-collection SubspaceInclusionTest.

use crate::error::{NsiError, Result};
use crate::estimator::SpectralDecomposition;
use crate::graph::NetworkGraph;
use crate::panel::TreatmentPanel;
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use serde::Serialize;

/// Least-squares residual threshold for column-space membership; the masks
/// are integer matrices, so anything clearly above rounding error works.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Default strictness for the subspace test.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Treatment indicator matrices. `b_pre` is `N x (T_pre * D)` with block `a`
/// (columns `[(a-1)*T_pre, a*T_pre)`) holding `Ind(A^pre = a)`; `b_post` is
/// `N x D` with `b_post[i, a-1] = Ind(target_i = a)`.
#[derive(Debug, Clone)]
pub struct MaskMatrices {
    pub b_pre: DMatrix<f64>,
    pub b_post: DMatrix<f64>,
}

impl MaskMatrices {
    pub fn build(treatments: &TreatmentPanel) -> Self {
        let n = treatments.n_units();
        let t_pre = treatments.t_pre;
        let d = treatments.d_treatments as usize;
        let b_pre = DMatrix::from_fn(n, t_pre * d, |i, col| {
            let a = (col / t_pre + 1) as u32;
            let t = col % t_pre;
            if treatments.a(i, t) == a {
                1.0
            } else {
                0.0
            }
        });
        let b_post = DMatrix::from_fn(n, d, |i, col| {
            if treatments.target[i] == col as u32 + 1 {
                1.0
            } else {
                0.0
            }
        });
        MaskMatrices { b_pre, b_post }
    }
}

/// Rows of `b_pre` restricted to `N(n)` — the matrix whose column rank
/// drives the diagnostic.
fn b_pre_n(g: &NetworkGraph, treatments: &TreatmentPanel, n: usize) -> Result<DMatrix<f64>> {
    let nbrs = g.neighbors(n)?;
    let t_pre = treatments.t_pre;
    let d = treatments.d_treatments as usize;
    Ok(DMatrix::from_fn(nbrs.len(), t_pre * d, |k, col| {
        let a = (col / t_pre + 1) as u32;
        let t = col % t_pre;
        if treatments.a(nbrs[k], t) == a {
            1.0
        } else {
            0.0
        }
    }))
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = crate::estimator::spectrum(m);
    let s1 = sv[0];
    if s1 <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > MEMBERSHIP_TOL * s1).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingVerdict {
    pub pass: bool,
    /// Condition 1: every target-mask column lies in the column space of
    /// the restricted training mask.
    pub colspace_ok: bool,
    /// Condition 2: each distinct neighborhood training column occurs at
    /// least `r_bar * D` times.
    pub repeats_ok: bool,
    pub colrank: usize,
}

/// Pre-data-collection diversity test on the treatment schedule for ego
/// unit `n` with target counterfactual `target_nbhd` (aligned with the
/// canonical order of `N(n)`).
pub fn training_treatment_test(
    g: &NetworkGraph,
    treatments: &TreatmentPanel,
    n: usize,
    target_nbhd: &[u32],
    r_bar: usize,
) -> Result<TrainingVerdict> {
    if r_bar == 0 {
        return Err(NsiError::input("r_bar must be at least 1"));
    }
    let nbrs = g.neighbors(n)?;
    if target_nbhd.len() != nbrs.len() {
        return Err(NsiError::input(format!(
            "target neighborhood vector has length {}, expected {}",
            target_nbhd.len(),
            nbrs.len()
        )));
    }
    let d = treatments.d_treatments as usize;
    let b_pre = b_pre_n(g, treatments, n)?;

    // orthonormal basis of the column space, via left singular vectors
    let sv = crate::estimator::SpectralDecomposition::compute(&b_pre);
    let u = &sv.left_vectors;
    let s1 = sv.singular_values[0];
    let kept: Vec<usize> = (0..sv.singular_values.len())
        .filter(|&l| sv.singular_values[l] > MEMBERSHIP_TOL * s1)
        .collect();
    let colrank = kept.len();

    let mut colspace_ok = true;
    for a in 0..d {
        let col = nalgebra::DVector::from_fn(nbrs.len(), |k, _| {
            if target_nbhd[k] == a as u32 + 1 {
                1.0
            } else {
                0.0
            }
        });
        let mut proj = nalgebra::DVector::zeros(nbrs.len());
        for &l in &kept {
            let ul = u.column(l);
            let coef = ul.dot(&col);
            proj += ul * coef;
        }
        if (col - proj).norm() > MEMBERSHIP_TOL {
            colspace_ok = false;
            break;
        }
    }

    let mut counts: std::collections::HashMap<Vec<u32>, usize> = std::collections::HashMap::new();
    for t in 0..treatments.t_pre {
        let pattern: Vec<u32> = nbrs.iter().map(|&j| treatments.a(j, t)).collect();
        *counts.entry(pattern).or_insert(0) += 1;
    }
    let repeats_ok = counts.values().all(|&c| c >= r_bar * d);

    Ok(TrainingVerdict {
        pass: colspace_ok && repeats_ok,
        colspace_ok,
        repeats_ok,
        colrank,
    })
}

/// Numerical column rank of the restricted training mask `B^{pre,n}`. A
/// value below `|N(n)|` rules out the subspace-inclusion assumption holding
/// for all targets.
pub fn colrank_diagnostic(
    treatments: &TreatmentPanel,
    g: &NetworkGraph,
    n: usize,
) -> Result<usize> {
    Ok(numerical_rank(&b_pre_n(g, treatments, n)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceVerdict {
    pub beta_hat: f64,
    pub kappa: usize,
    pub kappa_prime: usize,
    pub gamma: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Combined verdicts carried on an estimate report.
#[derive(Debug, Clone, Serialize, Default)]
pub struct Diagnostics {
    pub training: Option<TrainingVerdict>,
    pub subspace: Option<SubspaceVerdict>,
}

/// Post-data-collection spectral test. `beta_hat` measures how much of the
/// top-`kappa_prime` right singular subspace of the prediction-period donor
/// matrix escapes the top-`kappa` subspace of the training-period matrix;
/// the test passes when `beta_hat <= (1 - gamma) * kappa_prime`.
pub fn subspace_inclusion_test<S: Scalar>(
    z_pre_i: &DMatrix<S>,
    z_post_i: &DMatrix<S>,
    kappa: usize,
    kappa_prime: usize,
    gamma: f64,
) -> Result<(S, bool)> {
    if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
        return Err(NsiError::input(format!("gamma = {gamma} outside (0, 1)")));
    }
    if z_pre_i.ncols() != z_post_i.ncols() {
        return Err(NsiError::input(
            "training and prediction donor matrices must share columns",
        ));
    }
    let q_pre = z_pre_i.nrows().min(z_pre_i.ncols());
    let q_post = z_post_i.nrows().min(z_post_i.ncols());
    if kappa == 0 || kappa > q_pre {
        return Err(NsiError::input(format!("kappa = {kappa} outside [1, {q_pre}]")));
    }
    if kappa_prime == 0 || kappa_prime > q_post {
        return Err(NsiError::input(format!(
            "kappa_prime = {kappa_prime} outside [1, {q_post}]"
        )));
    }
    let d_pre = SpectralDecomposition::compute(z_pre_i);
    let d_post = SpectralDecomposition::compute(z_post_i);
    if d_post.singular_values[0] <= S::zero() {
        return Err(NsiError::infeasible("all-zero prediction donor matrix"));
    }
    if d_pre.singular_values[0] <= S::zero() {
        return Err(NsiError::infeasible("all-zero training donor matrix"));
    }
    let r_pre = d_pre.right_vectors.columns(0, kappa);
    let r_post = d_post.right_vectors.columns(0, kappa_prime);
    // ||(I - R R^T) R'||_F^2 = kappa_prime - ||R^T R'||_F^2
    let cross = r_pre.transpose() * r_post;
    let beta_hat = (S::of_usize(kappa_prime) - cross.norm_squared()).max(S::zero());
    let threshold = S::of_f64((1.0 - gamma) * kappa_prime as f64);
    Ok((beta_hat, beta_hat <= threshold))
}
