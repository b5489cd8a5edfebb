//! Simulation harness: runs seeded panel simulations and compares the NSI
//! estimator against the interference-blind SI variant and a donor-mean
//! baseline, reporting MSE, R², donor counts, raw residuals and CI
//! coverage.

use crate::design::{design_schedule, DesignSchedule};
use crate::donors::{find_donors, find_si_donors, DonorMember, DonorMode, DonorSet};
use crate::error::{NsiError, Result};
use crate::estimator::{
    estimate, select_kappa, CiQuantile, CiSpec, EstimateReport, KappaChoice, KappaPolicy,
};
use crate::graph::{make_regular_graph, NetworkGraph, RegularGraphKind};
use crate::panel::{
    mean_outcome, simulate, true_estimand, ObservationPanel, SimConfig, TreatmentPanel, WProcess,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GraphSpec {
    pub kind: RegularGraphKind,
    pub n_units: usize,
    pub degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingKind {
    /// Coloring-based schedule (filled out to `t_pre` when one is given;
    /// see [`ScheduleFill`]).
    Design,
    /// Per-unit uniform treatment held constant across training.
    Random,
}

/// How a design schedule is extended when `t_pre` exceeds its natural
/// length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFill {
    /// Repeat the base schedule cyclically. Every unit's active windows are
    /// spread across the whole training range, which keeps the signal
    /// spectrum well balanced under random-walk factors.
    Tile,
    /// Widen each period proportionally, keeping one contiguous active
    /// block per unit. Early blocks see small random-walk values, so the
    /// trailing signal singular values are weaker.
    Stretch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Nsi,
    Si,
    Baseline,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Nsi, EstimatorKind::Si, EstimatorKind::Baseline]
}

fn default_d_treatments() -> u32 {
    2
}
fn default_r_bar() -> usize {
    2
}
fn default_ci_level() -> f64 {
    95.0
}
fn default_max_targets() -> usize {
    64
}
fn default_si_kappa_min() -> usize {
    1
}
fn default_donor_mode() -> DonorMode {
    DonorMode::Identity
}
fn default_schedule_fill() -> ScheduleFill {
    ScheduleFill::Tile
}

fn default_training() -> TrainingKind {
    TrainingKind::Design
}
fn default_w_process() -> WProcess {
    WProcess::RandomWalk
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub graph: GraphSpec,
    #[serde(default = "default_d_treatments")]
    pub d_treatments: u32,
    pub rank: usize,
    pub noise_std: f64,
    /// Total training length; defaults to the natural design length. The
    /// random-training mode requires it.
    #[serde(default)]
    pub t_pre: Option<usize>,
    pub t_post: usize,
    pub n_sims: usize,
    pub n_eval_units: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Explicit component count; `None` means knee-point per estimand.
    #[serde(default)]
    pub kappa_fixed: Option<usize>,
    /// Estimands whose knee falls below this are excluded for NSI.
    /// Defaults to `max_degree + 1`.
    #[serde(default)]
    pub nsi_kappa_min: Option<usize>,
    #[serde(default = "default_si_kappa_min")]
    pub si_kappa_min: usize,
    #[serde(default = "default_donor_mode")]
    pub donor_mode: DonorMode,
    #[serde(default = "default_training")]
    pub training: TrainingKind,
    #[serde(default = "default_schedule_fill")]
    pub schedule_fill: ScheduleFill,
    #[serde(default = "default_r_bar")]
    pub r_bar: usize,
    #[serde(default = "default_w_process")]
    pub w_process: WProcess,
    /// Randomly keep only `sqrt(N)` donors per estimand.
    #[serde(default)]
    pub subsample: bool,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub two_sided_ci: bool,
    #[serde(default = "default_max_targets")]
    pub max_targets: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims == 0 {
            return Err(NsiError::input("n_sims must be at least 1"));
        }
        if self.rank == 0 {
            return Err(NsiError::input("rank must be positive"));
        }
        if self.t_post == 0 {
            return Err(NsiError::input("t_post must be positive"));
        }
        if self.n_eval_units == 0 || self.n_eval_units > self.graph.n_units {
            return Err(NsiError::input(format!(
                "n_eval_units = {} outside [1, {}]",
                self.n_eval_units, self.graph.n_units
            )));
        }
        if self.estimators.is_empty() {
            return Err(NsiError::input("no estimators enabled"));
        }
        if self.max_targets == 0 {
            return Err(NsiError::input("max_targets must be positive"));
        }
        if self.training == TrainingKind::Random && self.t_pre.is_none() {
            return Err(NsiError::input("random training requires t_pre"));
        }
        Ok(())
    }

    fn ci_spec(&self) -> CiSpec {
        CiSpec {
            level: self.ci_level,
            quantile: if self.two_sided_ci {
                CiQuantile::TwoSided
            } else {
                CiQuantile::OneSided
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorStats {
    pub mse: f64,
    pub r_squared: f64,
    pub mean_donor_count: f64,
    pub n_estimands: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub nsi: Option<EstimatorStats>,
    pub si: Option<EstimatorStats>,
    pub baseline: Option<EstimatorStats>,
    /// Pooled raw NSI residuals `point - truth`.
    pub residuals: Vec<f64>,
    pub ci_coverage: Option<f64>,
}

/// Runs the standard pipeline with the SI donor rule: units matching the
/// ego's OWN training row and whose prediction treatment equals `target_a`.
pub fn si_estimate(
    z: &ObservationPanel<f64>,
    treatments: &TreatmentPanel,
    n: usize,
    target_a: u32,
    kappa: KappaChoice,
    ci: CiSpec,
) -> Result<EstimateReport<f64>> {
    let donors = find_si_donors(treatments, n, target_a);
    let ds = DonorSet {
        ego: n,
        target_nbhd: vec![target_a],
        members: donors
            .into_iter()
            .map(|d| DonorMember { donor: d, perm: vec![0] })
            .collect(),
    };
    estimate(z, &ds, treatments.t_pre, kappa, ci)
}

/// Unweighted mean of the donors' prediction-period observations.
pub fn baseline_estimate(z: &ObservationPanel<f64>, ds: &DonorSet, t_pre: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(NsiError::infeasible(format!(
            "empty donor set for unit {}",
            ds.ego
        )));
    }
    let t_total = z.t_total();
    if t_pre >= t_total {
        return Err(NsiError::input("no prediction measurements"));
    }
    let donors = ds.indices();
    let mut total = 0.0;
    for t in t_pre..t_total {
        for &j in &donors {
            total += z.z[(t, j)];
        }
    }
    Ok(total / ((t_total - t_pre) as f64 * donors.len() as f64))
}

/// Sample skewness (biased, method-of-moments).
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Sample excess kurtosis.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stream: u64, idx: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_shl(32) | idx))
}

/// Training rows from a schedule, tiled cyclically so they fill exactly
/// `t_pre` columns. Tiling (rather than stretching each period into one
/// long block) spreads every unit's active windows across the whole
/// training range, which keeps the signal spectrum well balanced when the
/// common factors follow a random walk.
pub fn tiled_pre_rows(
    schedule: &DesignSchedule,
    r_bar: usize,
    t_pre: usize,
) -> Result<Vec<Vec<u32>>> {
    let base_len = schedule.t_pre();
    let d = schedule.d_treatments as usize;
    if t_pre < base_len {
        return Err(NsiError::input(format!(
            "t_pre = {t_pre} is shorter than the base schedule length {base_len} \
             (= {} periods of width {})",
            schedule.t_prime,
            r_bar * d
        )));
    }
    let rows = schedule
        .a_pre
        .iter()
        .map(|row| (0..t_pre).map(|t| row[t % base_len]).collect())
        .collect();
    Ok(rows)
}

/// Training rows from a schedule with each period widened so the periods
/// partition exactly `t_pre` columns (as equally as possible).
pub fn stretched_pre_rows(
    schedule: &DesignSchedule,
    r_bar: usize,
    t_pre: usize,
) -> Result<Vec<Vec<u32>>> {
    let t_prime = schedule.t_prime;
    let d = schedule.d_treatments as usize;
    if t_pre < t_prime * r_bar * d {
        return Err(NsiError::input(format!(
            "t_pre = {t_pre} cannot fit {t_prime} periods of width >= {}",
            r_bar * d
        )));
    }
    let base = t_pre / t_prime;
    let rem = t_pre % t_prime;
    let rows = schedule
        .a_pre
        .iter()
        .map(|row| {
            let mut out = Vec::with_capacity(t_pre);
            for (l, (_, cols)) in schedule.periods.iter().enumerate() {
                let width = base + usize::from(l < rem);
                out.extend(std::iter::repeat(row[cols.start]).take(width));
            }
            out
        })
        .collect();
    Ok(rows)
}

#[derive(Default, Clone)]
struct Acc {
    sq_point: f64,
    sum_theta: f64,
    sum_theta_sq: f64,
    n: usize,
    pointwise_sq: f64,
    n_pointwise: usize,
    donor_count: usize,
    excluded: usize,
}

impl Acc {
    fn record(&mut self, point: f64, theta: f64, pointwise: &[f64], truths: &[f64], donors: usize) {
        self.sq_point += (point - theta).powi(2);
        self.sum_theta += theta;
        self.sum_theta_sq += theta * theta;
        self.n += 1;
        for (p, m) in pointwise.iter().zip(truths) {
            self.pointwise_sq += (p - m).powi(2);
            self.n_pointwise += 1;
        }
        self.donor_count += donors;
    }

    fn merge(&mut self, other: &Acc) {
        self.sq_point += other.sq_point;
        self.sum_theta += other.sum_theta;
        self.sum_theta_sq += other.sum_theta_sq;
        self.n += other.n;
        self.pointwise_sq += other.pointwise_sq;
        self.n_pointwise += other.n_pointwise;
        self.donor_count += other.donor_count;
        self.excluded += other.excluded;
    }

    fn stats(&self) -> EstimatorStats {
        let ss_tot = self.sum_theta_sq - self.sum_theta.powi(2) / self.n.max(1) as f64;
        EstimatorStats {
            mse: self.pointwise_sq / self.n_pointwise.max(1) as f64,
            r_squared: 1.0 - self.sq_point / ss_tot,
            mean_donor_count: self.donor_count as f64 / self.n.max(1) as f64,
            n_estimands: self.n,
            n_excluded: self.excluded,
        }
    }
}

#[derive(Default)]
struct SimOut {
    nsi: Acc,
    si: Acc,
    baseline: Acc,
    residuals: Vec<f64>,
    cover_hits: usize,
    cover_total: usize,
}

struct SiCached {
    point: f64,
    pointwise: Vec<f64>,
    donors: usize,
}

fn run_sim(
    cfg: &BenchConfig,
    g: &NetworkGraph,
    schedule: Option<&DesignSchedule>,
    sim: usize,
) -> Result<SimOut> {
    let n = g.n_units();
    let d_treat = cfg.d_treatments;
    let nsi_kappa_min = cfg.nsi_kappa_min.unwrap_or(g.max_degree() + 1);
    let mut assign_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, sim as u64));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, sim as u64));
    let world_seed = derive_seed(cfg.seed, 3, sim as u64);

    let pre_rows: Vec<Vec<u32>> = match cfg.training {
        TrainingKind::Design => {
            let s = schedule.expect("schedule built for design training");
            match cfg.t_pre {
                Some(t_pre) if t_pre != s.t_pre() => match cfg.schedule_fill {
                    ScheduleFill::Tile => tiled_pre_rows(s, cfg.r_bar, t_pre)?,
                    ScheduleFill::Stretch => stretched_pre_rows(s, cfg.r_bar, t_pre)?,
                },
                _ => s.a_pre.clone(),
            }
        }
        TrainingKind::Random => {
            let t_pre = cfg.t_pre.unwrap();
            (0..n)
                .map(|_| vec![assign_rng.gen_range(1..=d_treat); t_pre])
                .collect()
        }
    };
    let prediction: Vec<u32> = (0..n).map(|_| assign_rng.gen_range(1..=d_treat)).collect();
    let rows: Vec<Vec<u32>> = pre_rows
        .into_iter()
        .zip(&prediction)
        .map(|(mut row, &a)| {
            row.extend(std::iter::repeat(a).take(cfg.t_post));
            row
        })
        .collect();
    let t_pre = rows[0].len() - cfg.t_post;
    let treatments =
        TreatmentPanel::new(rows, d_treat, t_pre, cfg.t_post, prediction.clone())?;

    let mut sim_cfg = SimConfig::new(cfg.rank, cfg.noise_std, world_seed);
    sim_cfg.w_process = cfg.w_process;
    let (z, world) = simulate(g, &treatments, &sim_cfg)?;

    let eval_units: Vec<usize> = sample(&mut eval_rng, n, cfg.n_eval_units).into_vec();
    let ci = cfg.ci_spec();
    let want = |k: EstimatorKind| cfg.estimators.contains(&k);
    let sqrt_n = (n as f64).sqrt().floor() as usize;

    let mut out = SimOut::default();
    let mut si_cache: HashMap<(usize, u32), Option<SiCached>> = HashMap::new();

    for &unit in &eval_units {
        let k = g.neighbors(unit)?.len();
        let total: Option<usize> = (d_treat as usize).checked_pow(k as u32);
        let targets: Vec<Vec<u32>> = match total {
            Some(total) if total <= cfg.max_targets => (0..total)
                .map(|idx| {
                    (0..k)
                        .map(|m| {
                            let digit = idx / (d_treat as usize).pow(m as u32) % d_treat as usize;
                            digit as u32 + 1
                        })
                        .collect()
                })
                .collect(),
            _ => (0..cfg.max_targets)
                .map(|_| (0..k).map(|_| eval_rng.gen_range(1..=d_treat)).collect())
                .collect(),
        };

        for target in targets {
            let theta = true_estimand(&world, g, &treatments, unit, &target)?;
            let truths: Vec<f64> = (t_pre..t_pre + cfg.t_post)
                .map(|t| mean_outcome(&world, g, t, unit, &target))
                .collect::<Result<_>>()?;

            let mut nsi_ds: Option<DonorSet> = None;
            if want(EstimatorKind::Nsi) || want(EstimatorKind::Baseline) {
                let mut ds = find_donors(g, &treatments, unit, &target, cfg.donor_mode)?;
                if cfg.subsample && ds.len() > sqrt_n {
                    let keep = sample(&mut eval_rng, ds.len(), sqrt_n).into_vec();
                    ds.members = keep.into_iter().map(|i| ds.members[i].clone()).collect();
                }
                nsi_ds = Some(ds);
            }

            if want(EstimatorKind::Nsi) {
                let ds = nsi_ds.as_ref().unwrap();
                match nsi_one(&z, ds, t_pre, cfg, nsi_kappa_min, ci)? {
                    Some(rep) => {
                        out.nsi
                            .record(rep.point, theta, &rep.pointwise, &truths, ds.len());
                        out.residuals.push(rep.point - theta);
                        out.cover_total += 1;
                        if theta >= rep.ci.0 && theta <= rep.ci.1 {
                            out.cover_hits += 1;
                        }
                    }
                    None => out.nsi.excluded += 1,
                }
            }

            if want(EstimatorKind::Si) {
                let own_pos = g.neighbors(unit)?.iter().position(|&j| j == unit).unwrap();
                let target_a = target[own_pos];
                let cached = si_cache.entry((unit, target_a)).or_insert_with(|| {
                    si_one(&z, &treatments, unit, target_a, cfg, ci).ok().flatten()
                });
                match cached {
                    Some(c) => out.si.record(c.point, theta, &c.pointwise, &truths, c.donors),
                    None => out.si.excluded += 1,
                }
            }

            if want(EstimatorKind::Baseline) {
                let ds = nsi_ds.as_ref().unwrap();
                if ds.is_empty() {
                    out.baseline.excluded += 1;
                } else {
                    let donors = ds.indices();
                    let pointwise: Vec<f64> = (t_pre..t_pre + cfg.t_post)
                        .map(|t| donors.iter().map(|&j| z.z[(t, j)]).sum::<f64>()
                            / donors.len() as f64)
                        .collect();
                    let point = pointwise.iter().sum::<f64>() / cfg.t_post as f64;
                    out.baseline
                        .record(point, theta, &pointwise, &truths, donors.len());
                }
            }
        }
    }
    Ok(out)
}

fn chosen_kappa(
    spectrum: &[f64],
    cfg: &BenchConfig,
    min_allowed: usize,
) -> Result<Option<usize>> {
    let kappa = match cfg.kappa_fixed {
        Some(k) => k.min(spectrum.len()).max(1),
        None => match select_kappa(spectrum, KappaPolicy::Knee, None) {
            Ok(k) => k,
            Err(NsiError::Infeasible(_)) => return Ok(None),
            Err(e) => return Err(e),
        },
    };
    Ok((kappa >= min_allowed).then_some(kappa))
}

fn nsi_one(
    z: &ObservationPanel<f64>,
    ds: &DonorSet,
    t_pre: usize,
    cfg: &BenchConfig,
    kappa_min: usize,
    ci: CiSpec,
) -> Result<Option<EstimateReport<f64>>> {
    if ds.is_empty() {
        return Ok(None);
    }
    let (_, z_pre_i, _) = crate::donors::donor_submatrices(z, t_pre, ds.ego, &ds.indices())?;
    let spectrum = crate::estimator::spectrum(&z_pre_i);
    let Some(kappa) = chosen_kappa(&spectrum, cfg, kappa_min)? else {
        return Ok(None);
    };
    match estimate(z, ds, t_pre, KappaChoice::Fixed(kappa), ci) {
        Ok(rep) => Ok(Some(rep)),
        Err(NsiError::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn si_one(
    z: &ObservationPanel<f64>,
    treatments: &TreatmentPanel,
    unit: usize,
    target_a: u32,
    cfg: &BenchConfig,
    ci: CiSpec,
) -> Result<Option<SiCached>> {
    let donors = find_si_donors(treatments, unit, target_a);
    if donors.is_empty() {
        return Ok(None);
    }
    let (_, z_pre_i, _) =
        crate::donors::donor_submatrices(z, treatments.t_pre, unit, &donors)?;
    let spectrum = crate::estimator::spectrum(&z_pre_i);
    let Some(kappa) = chosen_kappa(&spectrum, cfg, cfg.si_kappa_min)? else {
        return Ok(None);
    };
    match si_estimate(z, treatments, unit, target_a, KappaChoice::Fixed(kappa), ci) {
        Ok(rep) => Ok(Some(SiCached {
            point: rep.point,
            pointwise: rep.pointwise,
            donors: rep.donors.len(),
        })),
        Err(NsiError::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the configured number of simulations (in parallel) and aggregates.
/// Bit-identical output for identical configs.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let g = make_regular_graph(cfg.graph.kind, cfg.graph.n_units, cfg.graph.degree)?;
    let schedule = match cfg.training {
        TrainingKind::Design => Some(design_schedule(&g, cfg.d_treatments, cfg.r_bar, None)?),
        TrainingKind::Random => None,
    };

    let sims: Vec<SimOut> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| run_sim(cfg, &g, schedule.as_ref(), s))
        .collect::<Result<Vec<_>>>()?;

    let mut nsi = Acc::default();
    let mut si = Acc::default();
    let mut baseline = Acc::default();
    let mut residuals = Vec::new();
    let (mut hits, mut total) = (0usize, 0usize);
    for s in &sims {
        nsi.merge(&s.nsi);
        si.merge(&s.si);
        baseline.merge(&s.baseline);
        residuals.extend_from_slice(&s.residuals);
        hits += s.cover_hits;
        total += s.cover_total;
    }
    let want = |k: EstimatorKind| cfg.estimators.contains(&k);
    Ok(BenchResult {
        nsi: want(EstimatorKind::Nsi).then(|| nsi.stats()),
        si: want(EstimatorKind::Si).then(|| si.stats()),
        baseline: want(EstimatorKind::Baseline).then(|| baseline.stats()),
        residuals,
        ci_coverage: (total > 0).then(|| hits as f64 / total as f64),
    })
}

/// The ring comparison configuration reproduced in the acceptance suite,
/// parameterized by simulation count.
pub fn ring_comparison_config(n_sims: usize, seed: u64) -> BenchConfig {
    BenchConfig {
        graph: GraphSpec {
            kind: RegularGraphKind::Ring,
            n_units: 1000,
            degree: 2,
        },
        d_treatments: 2,
        rank: 2,
        noise_std: 0.1f64.sqrt(),
        t_pre: Some(150),
        t_post: 50,
        n_sims,
        n_eval_units: 50,
        estimators: default_estimators(),
        kappa_fixed: None,
        nsi_kappa_min: None,
        si_kappa_min: 1,
        donor_mode: DonorMode::Identity,
        training: TrainingKind::Design,
        schedule_fill: ScheduleFill::Stretch,
        r_bar: 2,
        w_process: WProcess::RandomWalk,
        subsample: false,
        ci_level: 95.0,
        two_sided_ci: false,
        max_targets: 64,
        seed,
    }
}
