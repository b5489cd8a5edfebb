//! File formats: panel and treatment CSV, the simulation config file, and
//! the JSON estimate report.
//!
//! Panel CSV: header `t,unit_0,...,unit_{N-1}`, one row per measurement,
//! floating-point entries. Treatment CSV: same shape, integer entries in
//! `[1, D]`. Graph edge lists live in `graph`.

use crate::error::{NsiError, Result};
use crate::estimator::EstimateReport;
use crate::graph::{make_regular_graph, NetworkGraph, RegularGraphKind};
use crate::panel::{
    simulate, ObservationPanel, SimConfig, TreatmentPanel, WProcess,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn header(n_units: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..n_units).map(|i| format!("unit_{i}")))
        .collect()
}

fn check_header(record: &csv::StringRecord) -> Result<usize> {
    if record.is_empty() || &record[0] != "t" {
        return Err(NsiError::input("expected header starting with `t`"));
    }
    for (i, field) in record.iter().skip(1).enumerate() {
        if field != format!("unit_{i}") {
            return Err(NsiError::input(format!(
                "expected header column `unit_{i}`, found `{field}`"
            )));
        }
    }
    Ok(record.len() - 1)
}

pub fn write_panel_csv(path: &Path, z: &ObservationPanel<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = z.n_units();
    w.write_record(header(n))?;
    for t in 0..z.t_total() {
        let mut row = Vec::with_capacity(n + 1);
        row.push(t.to_string());
        for i in 0..n {
            row.push(format!("{:.17e}", z.z[(t, i)]));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel_csv(path: &Path) -> Result<ObservationPanel<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let n = check_header(r.headers()?)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(NsiError::input(format!(
                "row has {} fields, expected {}",
                record.len(),
                n + 1
            )));
        }
        let row: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| NsiError::input(format!("bad panel value `{f}`")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(NsiError::input("panel CSV has no data rows"));
    }
    let z = DMatrix::from_fn(rows.len(), n, |t, i| rows[t][i]);
    Ok(ObservationPanel::new(z))
}

/// Writes the full treatment matrix (training and prediction columns).
pub fn write_treatments_csv(path: &Path, treatments: &TreatmentPanel) -> Result<()> {
    write_treatment_rows_csv(
        path,
        &(0..treatments.n_units())
            .map(|i| treatments.row(i).to_vec())
            .collect::<Vec<_>>(),
    )
}

/// Writes unit-major treatment rows in the panel CSV shape.
pub fn write_treatment_rows_csv(path: &Path, rows: &[Vec<u32>]) -> Result<()> {
    let n = rows.len();
    if n == 0 || rows[0].is_empty() {
        return Err(NsiError::input("no treatment rows to write"));
    }
    let t_total = rows[0].len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(n))?;
    for t in 0..t_total {
        let mut row = Vec::with_capacity(n + 1);
        row.push(t.to_string());
        for unit_row in rows {
            if unit_row.len() != t_total {
                return Err(NsiError::input("ragged treatment rows"));
            }
            row.push(unit_row[t].to_string());
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Returns unit-major rows; the caller supplies `t_pre` and the target.
pub fn read_treatments_csv(path: &Path) -> Result<Vec<Vec<u32>>> {
    let mut r = csv::Reader::from_path(path)?;
    let n = check_header(r.headers()?)?;
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
    for record in r.records() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(NsiError::input(format!(
                "row has {} fields, expected {}",
                record.len(),
                n + 1
            )));
        }
        for (i, f) in record.iter().skip(1).enumerate() {
            let v = f
                .parse::<u32>()
                .map_err(|_| NsiError::input(format!("bad treatment value `{f}`")))?;
            rows[i].push(v);
        }
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(NsiError::input("treatment CSV has no data rows"));
    }
    Ok(rows)
}

/// `simulate` subcommand config. Training treatments are constant per unit
/// and drawn uniformly, prediction treatments likewise (the constant-random
/// protocol); use the `design` subcommand for coloring-based schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFileConfig {
    pub n_units: usize,
    pub degree: usize,
    pub graph_kind: RegularGraphKind,
    pub rank: usize,
    pub noise_std: f64,
    pub t_pre: usize,
    pub t_post: usize,
    pub d_treatments: u32,
    pub w_process: WProcess,
    pub seed: u64,
}

pub fn read_simulate_config(path: &Path) -> Result<SimulateFileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| NsiError::input(format!("bad config: {e}")))
}

pub fn run_simulate_config(
    cfg: &SimulateFileConfig,
) -> Result<(ObservationPanel<f64>, TreatmentPanel)> {
    if cfg.t_pre == 0 || cfg.t_post == 0 {
        return Err(NsiError::input("t_pre and t_post must be positive"));
    }
    let g = make_regular_graph(cfg.graph_kind, cfg.n_units, cfg.degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows: Vec<Vec<u32>> = (0..cfg.n_units)
        .map(|_| {
            let train = rng.gen_range(1..=cfg.d_treatments);
            let post = rng.gen_range(1..=cfg.d_treatments);
            let mut row = vec![train; cfg.t_pre];
            row.extend(std::iter::repeat(post).take(cfg.t_post));
            row
        })
        .collect();
    let target: Vec<u32> = rows.iter().map(|r| r[cfg.t_pre]).collect();
    let treatments =
        TreatmentPanel::new(rows, cfg.d_treatments, cfg.t_pre, cfg.t_post, target)?;
    let mut sim_cfg = SimConfig::new(cfg.rank, cfg.noise_std, cfg.seed.wrapping_add(1));
    sim_cfg.w_process = cfg.w_process;
    let (z, _) = simulate(&g, &treatments, &sim_cfg)?;
    Ok((z, treatments))
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspaceJson {
    pub beta_hat: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestsJson {
    pub training: bool,
    pub subspace: SubspaceJson,
}

/// The `estimate` subcommand's JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct JsonReport {
    pub point: f64,
    pub ci: [f64; 2],
    pub ci_level: f64,
    pub alpha: Vec<f64>,
    pub sigma_hat: f64,
    pub kappa: usize,
    pub spectrum: Vec<f64>,
    pub donors: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tests: Option<TestsJson>,
}

impl JsonReport {
    pub fn from_report(rep: &EstimateReport<f64>, tests: Option<TestsJson>) -> Self {
        JsonReport {
            point: rep.point,
            ci: [rep.ci.0, rep.ci.1],
            ci_level: rep.ci_level,
            alpha: rep.alpha.iter().copied().collect(),
            sigma_hat: rep.sigma_hat,
            kappa: rep.kappa,
            spectrum: rep.spectrum.clone(),
            donors: rep.donors.clone(),
            tests,
        }
    }
}

/// Self-edge-free helper for the CLI: load a graph edge list.
pub fn read_graph(path: &Path) -> Result<NetworkGraph> {
    NetworkGraph::read_edge_list(path)
}
