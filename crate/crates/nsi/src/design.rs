//! Graph-coloring experiment design: builds a training schedule whose
//! treatment diversity guarantees the training test passes for every unit
//! and target, plus the tailored variant for a single known target.

use crate::error::{NsiError, Result};
use crate::graph::{Coloring, NetworkGraph};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

/// A coloring-derived training schedule.
#[derive(Debug, Clone)]
pub struct DesignSchedule {
    /// `N` rows of length `t_pre`.
    pub a_pre: Vec<Vec<u32>>,
    /// Per period: the active color set and the column range it occupies.
    pub periods: Vec<(Vec<usize>, Range<usize>)>,
    pub t_bar: usize,
    pub t_prime: usize,
    pub coloring: Coloring,
    pub d_treatments: u32,
}

impl DesignSchedule {
    pub fn t_pre(&self) -> usize {
        self.t_bar * self.t_prime
    }

    pub fn num_colors(&self) -> usize {
        self.coloring.num_colors
    }
}

/// Right-hand side of the schedule-length guarantee for a graph of maximum
/// degree `max_degree`: `r_bar * D * (d^2 + D) / (D - 1)`.
pub fn schedule_length_bound(max_degree: usize, d_treatments: u32, r_bar: usize) -> f64 {
    let d = max_degree as f64;
    let dt = d_treatments as f64;
    r_bar as f64 * dt * (d * d + dt) / (dt - 1.0)
}

fn schedule_from_coloring(
    coloring: Coloring,
    n_units: usize,
    d_treatments: u32,
    r_bar: usize,
    t_bar: Option<usize>,
) -> Result<DesignSchedule> {
    if d_treatments < 2 {
        return Err(NsiError::input("design requires at least 2 treatments"));
    }
    if r_bar == 0 {
        return Err(NsiError::input("r_bar must be at least 1"));
    }
    let d = d_treatments as usize;
    let min_t_bar = r_bar * d;
    let t_bar = t_bar.unwrap_or(min_t_bar);
    if t_bar < min_t_bar {
        return Err(NsiError::input(format!(
            "t_bar = {t_bar} below r_bar * D = {min_t_bar}"
        )));
    }
    let c = coloring.num_colors;
    let t_prime = c.div_ceil(d - 1);
    let mut a_pre = vec![vec![1u32; t_bar * t_prime]; n_units];
    let mut periods = Vec::with_capacity(t_prime);
    for l in 0..t_prime {
        let lo = l * (d - 1) + 1;
        let hi = ((l + 1) * (d - 1)).min(c);
        let colors: Vec<usize> = (lo..=hi).collect();
        let cols = l * t_bar..(l + 1) * t_bar;
        for (i, row) in a_pre.iter_mut().enumerate() {
            let ci = coloring.assignment[i];
            if ci >= lo && ci <= hi {
                let treatment = (ci % (d - 1)) as u32 + 2;
                row[cols.clone()].fill(treatment);
            }
        }
        periods.push((colors, cols));
    }
    Ok(DesignSchedule {
        a_pre,
        periods,
        t_bar,
        t_prime,
        coloring,
        d_treatments,
    })
}

/// Builds the training schedule: color the two-hop graph greedily, assign
/// at most `D - 1` colors per period, and hold each period's treatment
/// vector constant for `t_bar` measurements (default `r_bar * D`).
pub fn design_schedule(
    g: &NetworkGraph,
    d_treatments: u32,
    r_bar: usize,
    t_bar: Option<usize>,
) -> Result<DesignSchedule> {
    let coloring = g.two_hop().greedy_color();
    schedule_from_coloring(coloring, g.n_units(), d_treatments, r_bar, t_bar)
}

/// Uniform i.i.d. prediction treatments in `[1, D]`, held constant across
/// the prediction period by the caller.
pub fn random_prediction_treatments(n_units: usize, d_treatments: u32, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_units).map(|_| rng.gen_range(1..=d_treatments)).collect()
}

/// Single-target variant: two units conflict only if they are within two
/// hops AND their target treatments differ, which can need far fewer colors
/// (hence a shorter schedule) than the untailored design.
pub fn tailored_design(
    g: &NetworkGraph,
    d_treatments: u32,
    r_bar: usize,
    target: &[u32],
) -> Result<DesignSchedule> {
    if target.len() != g.n_units() {
        return Err(NsiError::input(format!(
            "target length {} does not match {} units",
            target.len(),
            g.n_units()
        )));
    }
    let two_hop = g.two_hop();
    let mut edges = Vec::new();
    for (i, j) in two_hop.edges() {
        if target[i] != target[j] {
            edges.push((i, j));
        }
    }
    let conflict = NetworkGraph::from_edges(g.n_units(), edges)?;
    let coloring = conflict.greedy_color();
    schedule_from_coloring(coloring, g.n_units(), d_treatments, r_bar, None)
}

/// Assembles a full treatment panel from a schedule and a constant
/// prediction assignment.
pub fn schedule_to_panel(
    schedule: &DesignSchedule,
    prediction: &[u32],
    t_post: usize,
    target: Vec<u32>,
) -> Result<crate::panel::TreatmentPanel> {
    if prediction.len() != schedule.a_pre.len() {
        return Err(NsiError::input("prediction vector length mismatch"));
    }
    let rows: Vec<Vec<u32>> = schedule
        .a_pre
        .iter()
        .zip(prediction)
        .map(|(pre, &a)| {
            let mut row = pre.clone();
            row.extend(std::iter::repeat(a).take(t_post));
            row
        })
        .collect();
    crate::panel::TreatmentPanel::new(rows, schedule.d_treatments, schedule.t_pre(), t_post, target)
}

/// Chi-square goodness-of-fit statistic against the uniform distribution
/// over `[1, D]`; used by callers sanity-checking randomized assignments.
pub fn uniformity_chi_square<S: Scalar>(sample: &[u32], d_treatments: u32) -> S {
    let n = sample.len();
    let d = d_treatments as usize;
    let mut counts = vec![0usize; d];
    for &a in sample {
        counts[(a - 1) as usize] += 1;
    }
    let expected = S::of_usize(n) / S::of_usize(d);
    counts
        .iter()
        .map(|&c| {
            let diff = S::of_usize(c) - expected;
            diff * diff / expected
        })
        .fold(S::zero(), |a, b| a + b)
}
