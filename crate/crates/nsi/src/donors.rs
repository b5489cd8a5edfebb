//! Donor discovery: units whose neighborhood treatment histories match the
//! ego's (up to permutation) in training and match the target counterfactual
//! in prediction.

use crate::error::{NsiError, Result};
use crate::graph::NetworkGraph;
use crate::panel::{ObservationPanel, TreatmentPanel};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Largest neighborhood size for which the exhaustive permutation search is
/// attempted (|N(i)|! candidate permutations).
pub const MAX_EXHAUSTIVE_NEIGHBORHOOD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DonorMode {
    /// Test only the canonical-order alignment `pi(k) = k`. This is a sound
    /// under-approximation and matches the counts reported for the
    /// reproduced experiments.
    Identity,
    /// Search all permutations; the lexicographically smallest witness per
    /// donor is stored.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DonorMember {
    pub donor: usize,
    /// `perm[m]` is the position in the donor's neighbor list aligned with
    /// the ego's `m`-th neighbor.
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DonorSet {
    pub ego: usize,
    pub target_nbhd: Vec<u32>,
    pub members: Vec<DonorMember>,
}

impl DonorSet {
    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.donor).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Does `perm` witness `candidate` as a donor for `ego`?
fn perm_witnesses(
    treatments: &TreatmentPanel,
    ego_nbrs: &[usize],
    cand_nbrs: &[usize],
    target_nbhd: &[u32],
    perm: &[usize],
) -> bool {
    for (m, &p) in perm.iter().enumerate() {
        let donor_unit = cand_nbrs[p];
        let ego_unit = ego_nbrs[m];
        if treatments.a_post(donor_unit) != target_nbhd[m] {
            return false;
        }
        if treatments.pre_row(donor_unit) != treatments.pre_row(ego_unit) {
            return false;
        }
    }
    true
}

/// In-place advance to the next lexicographic permutation.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Finds the donor set `I^(n)` for ego unit `n` and target counterfactual
/// `target_nbhd` (aligned with the canonical order of `N(n)`).
///
/// An empty donor set is a valid outcome; the estimator layer raises the
/// error.
pub fn find_donors(
    g: &NetworkGraph,
    treatments: &TreatmentPanel,
    n: usize,
    target_nbhd: &[u32],
    mode: DonorMode,
) -> Result<DonorSet> {
    let ego_nbrs = g.neighbors(n)?;
    if target_nbhd.len() != ego_nbrs.len() {
        return Err(NsiError::input(format!(
            "target neighborhood vector has length {}, expected {}",
            target_nbhd.len(),
            ego_nbrs.len()
        )));
    }
    let k = ego_nbrs.len();
    let mut members = Vec::new();
    for i in 0..g.n_units() {
        if i == n {
            continue;
        }
        let cand_nbrs = g.neighbors(i)?;
        if cand_nbrs.len() != k {
            continue;
        }
        match mode {
            DonorMode::Identity => {
                let identity: Vec<usize> = (0..k).collect();
                if perm_witnesses(treatments, ego_nbrs, cand_nbrs, target_nbhd, &identity) {
                    members.push(DonorMember {
                        donor: i,
                        perm: identity,
                    });
                }
            }
            DonorMode::Exhaustive => {
                if k > MAX_EXHAUSTIVE_NEIGHBORHOOD {
                    return Err(NsiError::input(format!(
                        "exhaustive donor search caps neighborhoods at {MAX_EXHAUSTIVE_NEIGHBORHOOD}, got {k}"
                    )));
                }
                let mut perm: Vec<usize> = (0..k).collect();
                loop {
                    if perm_witnesses(treatments, ego_nbrs, cand_nbrs, target_nbhd, &perm) {
                        members.push(DonorMember {
                            donor: i,
                            perm: perm.clone(),
                        });
                        break;
                    }
                    if !next_permutation(&mut perm) {
                        break;
                    }
                }
            }
        }
    }
    Ok(DonorSet {
        ego: n,
        target_nbhd: target_nbhd.to_vec(),
        members,
    })
}

/// SI donor rule: match on the unit's own training row and own prediction
/// treatment only. Exposed for the estimator comparison; no graph involved.
pub fn find_si_donors(treatments: &TreatmentPanel, n: usize, target_a: u32) -> Vec<usize> {
    (0..treatments.n_units())
        .filter(|&i| {
            i != n
                && treatments.pre_row(i) == treatments.pre_row(n)
                && treatments.a_post(i) == target_a
        })
        .collect()
}

/// Extracts `(z_pre_n, Z_pre_I, Z_post_I)` with donor columns ordered as in
/// `donors`.
pub fn donor_submatrices<S: Scalar>(
    z: &ObservationPanel<S>,
    t_pre: usize,
    ego: usize,
    donors: &[usize],
) -> Result<(DVector<S>, DMatrix<S>, DMatrix<S>)> {
    if donors.is_empty() {
        return Err(NsiError::infeasible(format!(
            "empty donor set for unit {ego}"
        )));
    }
    let t_total = z.t_total();
    if t_pre > t_total {
        return Err(NsiError::input(format!(
            "t_pre = {t_pre} exceeds panel length {t_total}"
        )));
    }
    let t_post = t_total - t_pre;
    let z_pre_n = DVector::from_fn(t_pre, |t, _| z.z[(t, ego)]);
    let z_pre_i = DMatrix::from_fn(t_pre, donors.len(), |t, c| z.z[(t, donors[c])]);
    let z_post_i = DMatrix::from_fn(t_post, donors.len(), |t, c| z.z[(t_pre + t, donors[c])]);
    Ok((z_pre_n, z_pre_i, z_post_i))
}
