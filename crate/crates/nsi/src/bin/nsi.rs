//! Command-line front end: simulate panels, emit design schedules, run the
//! estimator, run validity tests, and drive the benchmark harness.

use clap::{Args, Parser, Subcommand};
use nsi::bench::{run_bench, BenchConfig};
use nsi::design::{design_schedule, random_prediction_treatments, schedule_length_bound};
use nsi::donors::{find_donors, DonorMode};
use nsi::error::{NsiError, Result};
use nsi::estimator::{estimate, select_kappa, CiQuantile, CiSpec, KappaChoice, KappaPolicy};
use nsi::io::{
    read_graph, read_panel_csv, read_simulate_config, read_treatments_csv, run_simulate_config,
    write_panel_csv, write_treatment_rows_csv, write_treatments_csv, JsonReport, SubspaceJson,
    TestsJson,
};
use nsi::panel::TreatmentPanel;
use nsi::validity::{subspace_inclusion_test, training_treatment_test, DEFAULT_GAMMA};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "nsi", about = "Counterfactual estimation under network interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a seeded panel from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_panel: PathBuf,
        #[arg(long)]
        out_treatments: PathBuf,
    },
    /// Emit a coloring-based training schedule as treatment CSV.
    Design {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        d: u32,
        #[arg(long)]
        rbar: usize,
        #[arg(long)]
        tbar: Option<usize>,
        /// Prediction-period length appended with random constant treatments.
        #[arg(long, default_value_t = 0)]
        tpost: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a counterfactual for one unit; prints a JSON report.
    Estimate(EstimateArgs),
    /// Run a validity test; prints JSON and fails under --strict.
    Test {
        #[command(subcommand)]
        which: TestCommand,
    },
    /// Run the simulation benchmark from a TOML config.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump pooled raw residuals (estimate minus truth) as CSV.
        #[arg(long)]
        residuals_csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    treatments: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    unit: usize,
    /// Target counterfactual over N(unit) in ascending-neighbor order,
    /// e.g. "1,2,1".
    #[arg(long)]
    target: String,
    #[arg(long)]
    tpre: usize,
    /// "auto" (knee-point, floored at |N(unit)|) or an explicit integer.
    #[arg(long, default_value = "auto")]
    kappa: String,
    /// Confidence level in percent.
    #[arg(long, default_value_t = 95.0)]
    ci: f64,
    /// Use the two-sided normal quantile.
    #[arg(long)]
    two_sided: bool,
    /// Search neighbor permutations instead of canonical order only.
    #[arg(long)]
    exhaustive: bool,
    /// Repetition parameter for the training test diagnostic.
    #[arg(long, default_value_t = 1)]
    rbar: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    /// Exit with code 4 if a validity test fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum TestCommand {
    /// Pre-data-collection treatment-diversity test.
    Training {
        #[arg(long)]
        treatments: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        unit: usize,
        #[arg(long)]
        target: String,
        #[arg(long)]
        tpre: usize,
        #[arg(long, default_value_t = 1)]
        rbar: usize,
        #[arg(long)]
        strict: bool,
    },
    /// Post-data-collection subspace-inclusion test.
    Subspace {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        treatments: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        unit: usize,
        #[arg(long)]
        target: String,
        #[arg(long)]
        tpre: usize,
        #[arg(long)]
        kappa: Option<usize>,
        #[arg(long)]
        kappa_prime: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long)]
        strict: bool,
    },
}

fn parse_target(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| NsiError::input(format!("bad target entry `{p}`")))
        })
        .collect()
}

fn load_treatments(
    path: &std::path::Path,
    tpre: usize,
    target_full: Option<Vec<u32>>,
) -> Result<TreatmentPanel> {
    let rows = read_treatments_csv(path)?;
    let t_total = rows[0].len();
    if tpre == 0 || tpre >= t_total {
        return Err(NsiError::input(format!(
            "tpre = {tpre} outside [1, {})",
            t_total
        )));
    }
    let d = rows
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(1);
    let target = target_full.unwrap_or_else(|| rows.iter().map(|r| r[tpre]).collect());
    TreatmentPanel::new(rows, d, tpre, t_total - tpre, target)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<bool> {
    let g = read_graph(&args.graph)?;
    let z = read_panel_csv(&args.panel)?;
    let treatments = load_treatments(&args.treatments, args.tpre, None)?;
    if treatments.n_units() != g.n_units() {
        return Err(NsiError::input(format!(
            "treatment CSV has {} units but graph has {}",
            treatments.n_units(),
            g.n_units()
        )));
    }
    if z.n_units() != g.n_units() || z.t_total() != treatments.t_total() {
        return Err(NsiError::input("panel shape does not match treatments/graph"));
    }
    let target = parse_target(&args.target)?;
    let mode = if args.exhaustive {
        DonorMode::Exhaustive
    } else {
        DonorMode::Identity
    };
    let ds = find_donors(&g, &treatments, args.unit, &target, mode)?;
    let kappa = match args.kappa.as_str() {
        "auto" => KappaChoice::Auto,
        s => KappaChoice::Fixed(
            s.parse::<usize>()
                .map_err(|_| NsiError::input(format!("bad --kappa `{s}`")))?,
        ),
    };
    let ci = CiSpec {
        level: args.ci,
        quantile: if args.two_sided {
            CiQuantile::TwoSided
        } else {
            CiQuantile::OneSided
        },
    };
    let rep = estimate(&z, &ds, args.tpre, kappa, ci)?;
    if rep.leftover_energy > 0.1 {
        eprintln!(
            "warning: {:.1}% of spectral energy lies past kappa = {}; consider a larger kappa",
            100.0 * rep.leftover_energy,
            rep.kappa
        );
    }

    let training = training_treatment_test(&g, &treatments, args.unit, &target, args.rbar)?;
    let donors = ds.indices();
    let (_, z_pre_i, z_post_i) =
        nsi::donors::donor_submatrices(&z, args.tpre, args.unit, &donors)?;
    let kp_spectrum = nsi::estimator::spectrum(&z_post_i);
    let kappa_prime = select_kappa(&kp_spectrum, KappaPolicy::Knee, None)?;
    let (beta_hat, sub_pass) =
        subspace_inclusion_test(&z_pre_i, &z_post_i, rep.kappa, kappa_prime, args.gamma)?;
    let tests = TestsJson {
        training: training.pass,
        subspace: SubspaceJson {
            beta_hat,
            threshold: (1.0 - args.gamma) * kappa_prime as f64,
            pass: sub_pass,
        },
    };
    let all_pass = tests.training && tests.subspace.pass;
    let json = JsonReport::from_report(&rep, Some(tests));
    println!("{}", serde_json::to_string_pretty(&json).unwrap());
    Ok(all_pass)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            out_panel,
            out_treatments,
        } => {
            let cfg = read_simulate_config(&config)?;
            let (z, treatments) = run_simulate_config(&cfg)?;
            write_panel_csv(&out_panel, &z)?;
            write_treatments_csv(&out_treatments, &treatments)?;
            Ok(true)
        }
        Command::Design {
            graph,
            d,
            rbar,
            tbar,
            tpost,
            seed,
            out,
        } => {
            let g = read_graph(&graph)?;
            let s = design_schedule(&g, d, rbar, tbar)?;
            let mut rows = s.a_pre.clone();
            if tpost > 0 {
                let prediction = random_prediction_treatments(g.n_units(), d, seed);
                for (row, &a) in rows.iter_mut().zip(&prediction) {
                    row.extend(std::iter::repeat(a).take(tpost));
                }
            }
            write_treatment_rows_csv(&out, &rows)?;
            let summary = serde_json::json!({
                "num_colors": s.num_colors(),
                "t_prime": s.t_prime,
                "t_bar": s.t_bar,
                "t_pre": s.t_pre(),
                "bound_rhs": schedule_length_bound(g.max_degree(), d, rbar),
            });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(true)
        }
        Command::Estimate(args) => {
            let strict = args.strict;
            let pass = cmd_estimate(&args)?;
            Ok(pass || !strict)
        }
        Command::Test { which } => match which {
            TestCommand::Training {
                treatments,
                graph,
                unit,
                target,
                tpre,
                rbar,
                strict,
            } => {
                let g = read_graph(&graph)?;
                let panel = load_treatments(&treatments, tpre, None)?;
                let target = parse_target(&target)?;
                let v = training_treatment_test(&g, &panel, unit, &target, rbar)?;
                println!("{}", serde_json::to_string_pretty(&v).unwrap());
                Ok(v.pass || !strict)
            }
            TestCommand::Subspace {
                panel,
                treatments,
                graph,
                unit,
                target,
                tpre,
                kappa,
                kappa_prime,
                gamma,
                strict,
            } => {
                let g = read_graph(&graph)?;
                let z = read_panel_csv(&panel)?;
                let tp = load_treatments(&treatments, tpre, None)?;
                let target = parse_target(&target)?;
                let ds = find_donors(&g, &tp, unit, &target, DonorMode::Identity)?;
                let donors = ds.indices();
                let (_, z_pre_i, z_post_i) =
                    nsi::donors::donor_submatrices(&z, tpre, unit, &donors)?;
                let knee = |m: &nalgebra::DMatrix<f64>| -> Result<usize> {
                    select_kappa(&nsi::estimator::spectrum(m), KappaPolicy::Knee, None)
                };
                let k = match kappa {
                    Some(k) => k,
                    None => knee(&z_pre_i)?,
                };
                let kp = match kappa_prime {
                    Some(k) => k,
                    None => knee(&z_post_i)?,
                };
                let (beta_hat, pass) = subspace_inclusion_test(&z_pre_i, &z_post_i, k, kp, gamma)?;
                let out = serde_json::json!({
                    "beta_hat": beta_hat,
                    "kappa": k,
                    "kappa_prime": kp,
                    "gamma": gamma,
                    "pass": pass,
                });
                println!("{}", serde_json::to_string_pretty(&out).unwrap());
                Ok(pass || !strict)
            }
        },
        Command::Bench {
            config,
            out,
            residuals_csv,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg: BenchConfig =
                toml::from_str(&text).map_err(|e| NsiError::input(format!("bad config: {e}")))?;
            let result = run_bench(&cfg)?;
            std::fs::write(&out, serde_json::to_string_pretty(&result).unwrap())?;
            if let Some(path) = residuals_csv {
                let mut text = String::from("residual\n");
                for r in &result.residuals {
                    text.push_str(&format!("{r}\n"));
                }
                std::fs::write(path, text)?;
            }
            Ok(true)
        }
    }
}

fn main() {
    match run() {
        Ok(true) => {}
        Ok(false) => {
            eprintln!("error: validity test failed (strict mode)");
            std::process::exit(NsiError::TestFailure(String::new()).exit_code());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
