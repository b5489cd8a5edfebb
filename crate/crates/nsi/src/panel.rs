//! Treatment and observation panels, plus the latent-factor simulator.
//!
//! Treatments are 1-based labels in `[D]`. The observation matrix `Z` is
//! `T x N` (measurements by units); the treatment matrix `A` is `N x T`.

use crate::error::{NsiError, Result};
use crate::graph::NetworkGraph;
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// N x T treatment assignments split into training and prediction columns,
/// plus the target counterfactual assignment over all units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentPanel {
    /// Row-major, `a[n * t_total + t]`, entries in `1..=d_treatments`.
    a: Vec<u32>,
    n_units: usize,
    pub d_treatments: u32,
    pub t_pre: usize,
    pub t_post: usize,
    /// Target counterfactual treatment vector, length N.
    pub target: Vec<u32>,
}

impl TreatmentPanel {
    /// `rows[n]` is unit `n`'s treatment sequence of length `t_pre + t_post`.
    /// Prediction columns must be constant per unit.
    pub fn new(
        rows: Vec<Vec<u32>>,
        d_treatments: u32,
        t_pre: usize,
        t_post: usize,
        target: Vec<u32>,
    ) -> Result<Self> {
        let n_units = rows.len();
        let t_total = t_pre + t_post;
        if n_units == 0 || t_total == 0 {
            return Err(NsiError::input("treatment panel must be non-empty"));
        }
        if target.len() != n_units {
            return Err(NsiError::input(format!(
                "target length {} does not match {} units",
                target.len(),
                n_units
            )));
        }
        let mut a = Vec::with_capacity(n_units * t_total);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != t_total {
                return Err(NsiError::input(format!(
                    "unit {n}: row length {} != t_pre + t_post = {t_total}",
                    row.len()
                )));
            }
            for (t, &v) in row.iter().enumerate() {
                if v < 1 || v > d_treatments {
                    return Err(NsiError::input(format!(
                        "treatment A[{n}, {t}] = {v} outside [1, {d_treatments}]"
                    )));
                }
                if t > t_pre && v != row[t_pre] {
                    return Err(NsiError::input(format!(
                        "unit {n}: prediction treatments must be constant across T_post"
                    )));
                }
            }
            a.extend_from_slice(row);
        }
        for (n, &v) in target.iter().enumerate() {
            if v < 1 || v > d_treatments {
                return Err(NsiError::input(format!(
                    "target[{n}] = {v} outside [1, {d_treatments}]"
                )));
            }
        }
        Ok(TreatmentPanel {
            a,
            n_units,
            d_treatments,
            t_pre,
            t_post,
            target,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn t_total(&self) -> usize {
        self.t_pre + self.t_post
    }

    /// Treatment of unit `n` at measurement `t` (0-based `t`).
    pub fn a(&self, n: usize, t: usize) -> u32 {
        self.a[n * self.t_total() + t]
    }

    /// Full treatment row of unit `n`.
    pub fn row(&self, n: usize) -> &[u32] {
        let t = self.t_total();
        &self.a[n * t..(n + 1) * t]
    }

    /// Training portion of unit `n`'s treatment row.
    pub fn pre_row(&self, n: usize) -> &[u32] {
        &self.row(n)[..self.t_pre]
    }

    /// The constant prediction treatment `a^post_n`.
    pub fn a_post(&self, n: usize) -> u32 {
        debug_assert!(self.t_post > 0);
        self.a(n, self.t_pre)
    }

    /// Target counterfactual restricted to `N(n)` in canonical order.
    pub fn target_nbhd(&self, g: &NetworkGraph, n: usize) -> Result<Vec<u32>> {
        Ok(g.neighbors(n)?.iter().map(|&j| self.target[j]).collect())
    }
}

/// T x N matrix of observed outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel<S: Scalar> {
    pub z: DMatrix<S>,
}

impl<S: Scalar> ObservationPanel<S> {
    pub fn new(z: DMatrix<S>) -> Self {
        ObservationPanel { z }
    }

    pub fn t_total(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WProcess {
    /// Every `w_{t,a}` drawn i.i.d. from the uniform box.
    IidUniform,
    /// `w_{1,a}` uniform, subsequent steps add a uniform increment.
    RandomWalk,
}

/// Scale of the uniform box the latent factors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorScale {
    /// `1 / sqrt(r * d)`.
    InvSqrtRd,
    /// `1 / sqrt(r * (d + 1))` — the scale used in the reproduced experiments.
    InvSqrtRdPlus1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`, variance `sigma^2`.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig<S: Scalar> {
    pub rank: usize,
    pub noise_std: S,
    pub seed: u64,
    pub w_process: WProcess,
    pub factor_scale: FactorScale,
    pub noise_kind: NoiseKind,
}

impl<S: Scalar> SimConfig<S> {
    pub fn new(rank: usize, noise_std: S, seed: u64) -> Self {
        SimConfig {
            rank,
            noise_std,
            seed,
            w_process: WProcess::RandomWalk,
            factor_scale: FactorScale::InvSqrtRdPlus1,
            noise_kind: NoiseKind::Gaussian,
        }
    }
}

/// Ground-truth latent factors of a simulated world.
#[derive(Debug, Clone)]
pub struct LatentFactorWorld<S: Scalar> {
    pub rank: usize,
    /// `(j, i) -> u_{j,i}`, defined exactly for `j` in `N(i)`.
    pub u_factors: HashMap<(usize, usize), Vec<S>>,
    /// `w_factors[t][a - 1]` is `w_{t,a}`, length `rank`.
    pub w_factors: Vec<Vec<Vec<S>>>,
    pub noise_std: S,
    pub seed: u64,
}

impl<S: Scalar> LatentFactorWorld<S> {
    pub fn u(&self, j: usize, i: usize) -> &[S] {
        &self.u_factors[&(j, i)]
    }

    pub fn w(&self, t: usize, a: u32) -> &[S] {
        &self.w_factors[t][(a - 1) as usize]
    }
}

fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter().zip(y).fold(S::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Noiseless conditional mean `E[Y_{t,n} | LF]` for a neighborhood treatment
/// vector aligned with the canonical neighbor order.
pub fn mean_outcome<S: Scalar>(
    world: &LatentFactorWorld<S>,
    g: &NetworkGraph,
    t: usize,
    n: usize,
    a_nbhd: &[u32],
) -> Result<S> {
    let nbrs = g.neighbors(n)?;
    if a_nbhd.len() != nbrs.len() {
        return Err(NsiError::input(format!(
            "neighborhood treatment vector has length {}, expected {}",
            a_nbhd.len(),
            nbrs.len()
        )));
    }
    let mut total = S::zero();
    for (&j, &a) in nbrs.iter().zip(a_nbhd) {
        total += dot(world.u(j, n), world.w(t, a));
    }
    Ok(total)
}

/// Ground-truth target estimand: the noiseless mean under the target
/// neighborhood treatment, averaged over the prediction measurements.
pub fn true_estimand<S: Scalar>(
    world: &LatentFactorWorld<S>,
    g: &NetworkGraph,
    treatments: &TreatmentPanel,
    n: usize,
    target_nbhd: &[u32],
) -> Result<S> {
    let mut total = S::zero();
    for t in treatments.t_pre..treatments.t_total() {
        total += mean_outcome(world, g, t, n, target_nbhd)?;
    }
    Ok(total / S::of_usize(treatments.t_post))
}

/// Draws a latent-factor world and the corresponding observed panel.
/// Deterministic given `cfg.seed`.
pub fn simulate<S: Scalar>(
    g: &NetworkGraph,
    treatments: &TreatmentPanel,
    cfg: &SimConfig<S>,
) -> Result<(ObservationPanel<S>, LatentFactorWorld<S>)> {
    if cfg.rank == 0 {
        return Err(NsiError::input("rank must be positive"));
    }
    if treatments.n_units() != g.n_units() {
        return Err(NsiError::input(format!(
            "treatment panel has {} units but graph has {}",
            treatments.n_units(),
            g.n_units()
        )));
    }
    let n = g.n_units();
    let t_total = treatments.t_total();
    let d_max = g.max_degree();
    let r = cfg.rank;
    let bound = match cfg.factor_scale {
        FactorScale::InvSqrtRd => {
            if d_max == 0 {
                return Err(NsiError::input(
                    "inv-sqrt-rd scaling needs a graph with at least one edge",
                ));
            }
            S::one() / (S::of_usize(r * d_max)).sqrt()
        }
        FactorScale::InvSqrtRdPlus1 => S::one() / (S::of_usize(r * (d_max + 1))).sqrt(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw_box = |rng: &mut ChaCha8Rng| -> Vec<S> {
        (0..r).map(|_| S::sample_uniform(rng, -bound, bound)).collect()
    };

    let mut u_factors = HashMap::new();
    for i in 0..n {
        for &j in g.neighbors(i)? {
            let v = draw_box(&mut rng);
            u_factors.insert((j, i), v);
        }
    }

    let d_treat = treatments.d_treatments as usize;
    let mut w_factors: Vec<Vec<Vec<S>>> = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let mut per_treatment = Vec::with_capacity(d_treat);
        for a in 0..d_treat {
            let v = match (t, cfg.w_process) {
                (0, _) | (_, WProcess::IidUniform) => draw_box(&mut rng),
                (_, WProcess::RandomWalk) => {
                    let step = draw_box(&mut rng);
                    w_factors[t - 1][a]
                        .iter()
                        .zip(&step)
                        .map(|(&p, &s)| p + s)
                        .collect()
                }
            };
            per_treatment.push(v);
        }
        w_factors.push(per_treatment);
    }

    let world = LatentFactorWorld {
        rank: r,
        u_factors,
        w_factors,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
    };

    let sqrt3 = S::of_f64(3.0).sqrt();
    let mut z = DMatrix::<S>::zeros(t_total, n);
    for t in 0..t_total {
        for unit in 0..n {
            let a_nbhd: Vec<u32> = g
                .neighbors(unit)?
                .iter()
                .map(|&j| treatments.a(j, t))
                .collect();
            let mean = mean_outcome(&world, g, t, unit, &a_nbhd)?;
            let eps = if cfg.noise_std == S::zero() {
                S::zero()
            } else {
                match cfg.noise_kind {
                    NoiseKind::Gaussian => S::sample_std_normal(&mut rng) * cfg.noise_std,
                    NoiseKind::Uniform => {
                        let half = sqrt3 * cfg.noise_std;
                        S::sample_uniform(&mut rng, -half, half)
                    }
                }
            };
            z[(t, unit)] = mean + eps;
        }
    }
    Ok((ObservationPanel::new(z), world))
}

/// Seeded world with arbitrary (not simulation-scaled) factors, for tests.
#[cfg(test)]
pub(crate) fn random_world<S: Scalar>(
    g: &NetworkGraph,
    rank: usize,
    d_treatments: u32,
    t_total: usize,
    seed: u64,
) -> LatentFactorWorld<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u_factors = HashMap::new();
    for i in 0..g.n_units() {
        for &j in g.neighbors(i).unwrap() {
            let v: Vec<S> = (0..rank)
                .map(|_| S::sample_uniform(&mut rng, -S::one(), S::one()))
                .collect();
            u_factors.insert((j, i), v);
        }
    }
    let w_factors = (0..t_total)
        .map(|_| {
            (0..d_treatments)
                .map(|_| {
                    (0..rank)
                        .map(|_| S::sample_uniform(&mut rng, -S::one(), S::one()))
                        .collect()
                })
                .collect()
        })
        .collect();
    LatentFactorWorld {
        rank,
        u_factors,
        w_factors,
        noise_std: S::zero(),
        seed,
    }
}
