//! Command-line driver for QMP solves, transceiver designs and the scalar self-test.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::closed::{self, SingleConstraintInstance};
use crate::error::{QmpError, Result};
use crate::fixture::{self, MatrixFixture};
use crate::generate::{self, ScalarKind};
use crate::matrix::{CMatrix, C64};
use crate::oracle;
use crate::polish::kkt_polish;
use crate::relay::network::NetworkFixture;
use crate::relay::{
    generate_network, run_design, DesignSettings, InitPolicy, NetworkDims, Preset, RelayNetwork,
    ScalarChain, ScenarioConfig,
};
use crate::solver::{self, Settings, SolvePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    SolveQmp,
    Design,
    Selftest,
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "qmp",
    version,
    about = "QMP solvers and AF-relay MMSE transceiver design"
)]
pub struct Args {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Problem fixture (solve-qmp) or network fixture (design).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "relay")]
    pub preset: Preset,
    /// Node counts and sizes as sources,relays,destinations,antennas,streams.
    #[arg(long, default_value = "2,2,2,2,1")]
    pub dims: NetworkDims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Solver tolerance for solve-qmp; relative stopping change for design.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Interior-point iterations for solve-qmp; sweeps for design.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Forces a solver path.
    #[arg(long)]
    pub path: Option<SolvePath>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Output directory.
    #[arg(long, default_value = "qmp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub enum Scenario {
    Fixture(PathBuf),
    Generated { preset: Preset, dims: NetworkDims },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    pub scenario: Scenario,
    pub seed: u64,
    pub solver: Settings,
    pub design: DesignSettings,
    pub trials: usize,
    pub out: PathBuf,
}

impl TryFrom<Args> for RunConfig {
    type Error = QmpError;

    fn try_from(a: Args) -> Result<Self> {
        if let Some(tol) = a.tol {
            if !(tol > 0.0) {
                return Err(QmpError::Parameter(format!(
                    "--tol must be positive, got {tol}"
                )));
            }
        }
        if a.max_iter == Some(0) {
            return Err(QmpError::Parameter("--max-iter must be positive".into()));
        }
        if a.trials == 0 {
            return Err(QmpError::Parameter("--trials must be positive".into()));
        }
        if a.mode == Mode::SolveQmp && a.input.is_none() {
            return Err(QmpError::Parameter("solve-qmp needs --input".into()));
        }
        let mut solver = Settings {
            path: a.path,
            ..Settings::default()
        };
        let mut design = DesignSettings::default();
        match a.mode {
            Mode::Design => {
                design.rel_tol = a.tol.unwrap_or(design.rel_tol);
                design.max_sweeps = a.max_iter.unwrap_or(design.max_sweeps);
                design.solver.path = a.path;
            }
            _ => {
                solver.tol = a.tol.unwrap_or(solver.tol);
                solver.max_iter = a.max_iter.unwrap_or(solver.max_iter);
            }
        }
        let scenario = match &a.input {
            Some(p) => Scenario::Fixture(p.clone()),
            None => Scenario::Generated {
                preset: a.preset,
                dims: a.dims,
            },
        };
        Ok(Self {
            mode: a.mode,
            input: a.input,
            scenario,
            seed: a.seed,
            solver,
            design,
            trials: a.trials,
            out: a.out,
        })
    }
}

/// Runs the requested mode, writing a human-readable report to `log`.
/// Returns whether every requested operation succeeded.
pub fn run(cfg: &RunConfig, log: &mut dyn Write) -> Result<bool> {
    match cfg.mode {
        Mode::SolveQmp => solve_qmp(cfg, log),
        Mode::Design => design(cfg, log),
        Mode::Selftest => selftest(log),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| QmpError::Io(format!("{}: {e}", dir.display())))
}

fn solve_qmp(cfg: &RunConfig, log: &mut dyn Write) -> Result<bool> {
    let input = cfg.input.as_deref().expect("checked in RunConfig");
    let problem = fixture::read_problem(input)?;
    create_out(&cfg.out)?;
    let diag_path = cfg.out.join("diagnostic.json");
    let sol = match solver::solve(&problem, &cfg.solver) {
        Ok(sol) => sol,
        Err(e) => {
            fixture::write_json(&diag_path, &json!({ "error": e.to_string() }))?;
            writeln!(log, "solve failed: {e}")?;
            return Ok(false);
        }
    };
    let multipliers = kkt_polish(&problem, &sol.x, None).map(|p| p.multipliers);
    let mut diag = serde_json::to_value(sol.diagnostic())?;
    diag["multipliers"] = json!(multipliers);
    fixture::write_json(&diag_path, &diag)?;
    fixture::write_json(&cfg.out.join("x.json"), &MatrixFixture::from(&sol.x))?;

    writeln!(log, "path {}", sol.path)?;
    writeln!(log, "objective {:.12e}", sol.objective)?;
    match sol.lower_bound {
        Some(b) => writeln!(log, "lower_bound {b:.12e}")?,
        None => writeln!(log, "lower_bound none")?,
    }
    writeln!(
        log,
        "feasibility_violation {:.3e}",
        sol.feasibility_violation
    )?;
    writeln!(log, "recovery_rank_gap {:.3e}", sol.recovery_rank_gap)?;
    if let Some(c) = &sol.cone {
        writeln!(
            log,
            "ipm {:?} iterations {} gap {:.3e}",
            c.status, c.iterations, c.gap
        )?;
    }
    match &multipliers {
        Some(mu) => writeln!(
            log,
            "mu {}",
            mu.iter()
                .map(|v| format!("{v:.12}"))
                .collect::<Vec<_>>()
                .join(" ")
        )?,
        None => writeln!(log, "mu unavailable")?,
    }
    for r in 0..sol.x.rows() {
        let row: Vec<String> = (0..sol.x.cols())
            .map(|c| format_complex(sol.x[(r, c)]))
            .collect();
        writeln!(log, "x[{r}] {}", row.join(" "))?;
    }
    Ok(true)
}

fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{:.12}", z.re)
    } else {
        format!("{:.12}{:+.12}i", z.re, z.im)
    }
}

#[derive(Debug, Clone)]
struct TrialOutcome {
    seed: u64,
    sweeps: usize,
    converged: bool,
    final_mse: f64,
    monotone: bool,
}

fn design(cfg: &RunConfig, log: &mut dyn Write) -> Result<bool> {
    let fixed = match &cfg.scenario {
        Scenario::Fixture(path) => {
            let f: NetworkFixture = fixture::read_json(path)?;
            Some(RelayNetwork::try_from(&f)?)
        }
        Scenario::Generated { .. } => None,
    };
    create_out(&cfg.out)?;
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|t| cfg.seed + t).collect();
    let results: Vec<Result<TrialOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let fixed = fixed.as_ref();
                scope.spawn(move || trial(cfg, fixed, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trial thread panicked"))
            .collect()
    });

    let mut ok = true;
    let mut finals = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(t) => {
                writeln!(
                    log,
                    "trial seed={} sweeps={} converged={} monotone={} final_mse={:.11e}",
                    t.seed, t.sweeps, t.converged, t.monotone, t.final_mse
                )?;
                finals.push(t.final_mse);
            }
            Err(e) => {
                writeln!(log, "trial seed={seed} failed: {e}")?;
                ok = false;
            }
        }
    }
    let summary = summary_lines(&finals, cfg.trials);
    std::fs::write(cfg.out.join("summary.txt"), summary.join("\n") + "\n")?;
    for line in &summary {
        writeln!(log, "{line}")?;
    }
    Ok(ok)
}

fn trial(cfg: &RunConfig, fixed: Option<&RelayNetwork>, seed: u64) -> Result<TrialOutcome> {
    let (net, init) = match (fixed, &cfg.scenario) {
        (Some(net), _) => (net.clone(), InitPolicy::Random(seed)),
        (None, Scenario::Generated { preset, dims }) => (
            generate_network(&ScenarioConfig::new(*preset, *dims), seed)?,
            InitPolicy::ScaledIdentity,
        ),
        (None, Scenario::Fixture(_)) => {
            unreachable!("fixture networks are loaded before the trials")
        }
    };
    let d = run_design(&net, &DesignSettings { init, ..cfg.design })?;
    std::fs::write(cfg.out.join(format!("trace_{seed}.csv")), d.trace.to_csv())?;
    Ok(TrialOutcome {
        seed,
        sweeps: d.sweeps,
        converged: d.converged,
        final_mse: d.trace.final_mse(),
        monotone: d.trace.is_monotone(crate::relay::bcd::DESCENT_SLACK),
    })
}

fn summary_lines(finals: &[f64], trials: usize) -> Vec<String> {
    let mut out = vec![
        format!("trials {trials}"),
        format!("completed {}", finals.len()),
    ];
    if !finals.is_empty() {
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push(format!("mean_final_mse {mean:.11e}"));
        out.push(format!("min_final_mse {min:.11e}"));
        out.push(format!("max_final_mse {max:.11e}"));
    }
    out
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn selftest(log: &mut dyn Write) -> Result<bool> {
    let checks = [budget_fixture(), scalar_paths(), chain_fixed_point()];
    let mut ok = true;
    for c in checks {
        let c = c.unwrap_or_else(|e| Check {
            name: "error",
            passed: false,
            detail: e.to_string(),
        });
        writeln!(
            log,
            "{} {} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        )?;
        ok &= c.passed;
    }
    Ok(ok)
}

fn real(v: f64) -> CMatrix {
    CMatrix::scalar(C64::new(v, 0.0))
}

fn budget_fixture() -> Result<Check> {
    let inst = SingleConstraintInstance::new(real(1.0), real(-1.0), 0.0, real(1.0), 0.25)?;
    let (x, diag) = closed::solve_single_constraint(&inst, 1e-12)?;
    let err = (x[(0, 0)] - C64::new(0.5, 0.0))
        .norm()
        .max((diag.mu - 1.0).abs());
    Ok(Check {
        name: "scalar_budget",
        passed: err <= 1e-8,
        detail: format!("mu={:.12} err={err:.1e}", diag.mu),
    })
}

fn scalar_paths() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kinds = [
        ScalarKind::Unconstrained,
        ScalarKind::Power,
        ScalarKind::Convex,
        ScalarKind::Nonconvex,
        ScalarKind::Equality,
    ];
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let p = generate::scalar_problem(kind, &mut rng);
        let grid = oracle::scalar_qmp(&p)?
            .ok_or_else(|| QmpError::Validation("grid found no feasible point".into()))?;
        for path in solver::applicable_paths(&p) {
            let sol = solver::solve(&p, &Settings::with_path(path))?;
            worst = worst.max((sol.objective - grid.value).abs());
        }
    }
    Ok(Check {
        name: "scalar_paths_vs_grid",
        passed: worst <= 1e-3,
        detail: format!("max_gap={worst:.1e}"),
    })
}

fn chain_fixed_point() -> Result<Check> {
    let chain = ScalarChain {
        source_relay: 0.9,
        relay_destination: 1.2,
        signal: 1.0,
        relay_noise: 0.2,
        destination_noise: 0.1,
        source_power: 1.0,
        relay_power: 1.0,
    };
    let d = run_design(&chain.network(), &DesignSettings::default())?;
    let grid = oracle::scalar_chain(&chain, 80);
    let gap = (d.trace.final_mse() - grid.mse).abs();
    Ok(Check {
        name: "scalar_chain_vs_grid",
        passed: gap <= 1e-3 && d.trace.is_monotone(crate::relay::bcd::DESCENT_SLACK),
        detail: format!("bcd={:.9} grid={:.9}", d.trace.final_mse(), grid.mse),
    })
}
