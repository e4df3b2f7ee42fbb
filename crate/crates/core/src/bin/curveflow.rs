use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use curveflow::config::{load_config, parse_resolution, RunConfig, DEFAULT_RESOLUTION};
use curveflow::flow::{
    run_flow_with, solve_stationary, verify_evolution_identities, BarrierParams, FlowEngine, RunOptions, RunStatus,
};
use curveflow::grid::{read_snapshot, ScalarField};
use curveflow::presets::{InitialProfile, SphereCap};
use curveflow::radial::compare_with_oracle;
use curveflow::report::{pass_fail, run_report, write_run_outputs, REPORT_FILE, SNAPSHOT_FILE};
use curveflow::symfunc::{check_structure, CurvatureFunction, Family};
use curveflow::Error;

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_TIMEOUT: u8 = 2;
const EXIT_BREAKDOWN: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "curveflow", version, about = "Neumann curvature flow of convex graphs")]
struct Cli {
    /// TOML configuration; the sphere-cap problem when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Grid resolution as NRHOxNTHETA.
    #[arg(long, global = true)]
    resolution: Option<String>,
    /// Residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Final time.
    #[arg(long, global = true)]
    tmax: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the flow and write monitors, final state and report.
    Run {
        /// Also write every k-th state to <out>/trajectory.
        #[arg(long)]
        save_every: Option<usize>,
    },
    /// Solve the stationary problem and cross-check it against the flow.
    Stationary,
    /// Compare the planar engine with the radial solver on a disk.
    Oracle {
        /// Radial nodes per planar ring.
        #[arg(long, default_value_t = 4)]
        radial_factor: usize,
    },
    /// Initial-data checks, barrier and evolution identities.
    Verify {
        /// Directory of snapshots written by `run --save-every`; the three
        /// consecutive states with the smallest time steps are checked.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Structure checks of a curvature function.
    Props {
        #[arg(long, default_value = "combined")]
        family: String,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// `l` for quotient/combined, `k` for kth_root.
        #[arg(long, default_value_t = 1)]
        order: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::FlowBreakdown { .. } | Error::LinearSolve(_) | Error::ConeViolation { .. } => EXIT_BREAKDOWN,
        _ => EXIT_CONFIG,
    }
}

fn load(cli: &Cli) -> curveflow::Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::sphere_cap(DEFAULT_RESOLUTION.0, DEFAULT_RESOLUTION.1)?,
    };
    if let Some(r) = &cli.resolution {
        let (nr, nt) = parse_resolution(r)?;
        if matches!(rc.flow.initial.profile, InitialProfile::Values(_)) {
            return Err(Error::Usage("--resolution cannot resample snapshot initial data".into()));
        }
        rc.flow.n_rho = nr;
        rc.flow.n_theta = nt;
    }
    if let Some(t) = cli.tol {
        rc.flow.tol_res = t;
    }
    if let Some(t) = cli.tmax {
        rc.flow.t_max = t;
    }
    rc.validate()?;
    Ok(rc)
}

fn out_dir(cli: &Cli, rc: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| rc.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("curveflow-out"))
}

fn cmd_run(cli: &Cli, save_every: Option<usize>) -> curveflow::Result<u8> {
    let rc = load(cli)?;
    let dir = out_dir(cli, &rc);
    let mut opts = RunOptions::default();
    if let Some(k) = save_every {
        if k == 0 {
            return Err(Error::Usage("--save-every must be at least 1".into()));
        }
        opts.capture_steps = (0..=rc.flow.max_steps).step_by(k).collect();
    }
    let run = run_flow_with(&rc.flow, &opts)?;
    let report = run_report(&run);
    write_run_outputs(&dir, &run, &report)?;
    if !run.captures.is_empty() {
        let tdir = dir.join("trajectory");
        fs::create_dir_all(&tdir)?;
        for (step, field) in &run.captures {
            run.engine
                .grid()
                .write_snapshot(field, &tdir.join(format!("step_{step:06}.snap")))?;
        }
    }
    print!("{report}");
    println!("outputs in {}", dir.display());
    Ok(match run.status {
        RunStatus::Converged => 0,
        RunStatus::Timeout => EXIT_TIMEOUT,
    })
}

fn sup_diff(a: &ScalarField, b: &ScalarField, n: usize) -> f64 {
    (0..n).map(|i| (a.value(i) - b.value(i)).abs()).fold(0.0, f64::max)
}

fn cmd_stationary(cli: &Cli) -> curveflow::Result<u8> {
    let rc = load(cli)?;
    let dir = out_dir(cli, &rc);
    let st = solve_stationary(&rc.flow)?;
    let flow = run_flow_with(&rc.flow, &RunOptions::default())?;
    let grid = flow.engine.grid();
    let n = grid.n_owned();
    let diff = sup_diff(&st.field, &flow.final_state.u, n);
    let agree = diff <= 10.0 * rc.flow.tol_res;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "stationary solve: {} after {} steps, residual {:e} (target {:e})",
        if st.status == RunStatus::Converged { "converged" } else { "timeout" },
        st.steps,
        st.residual,
        0.01 * rc.flow.tol_res
    );
    let _ = writeln!(
        s,
        "{} agreement with the flow limit: sup difference {diff:e} (tol {:e})",
        pass_fail(agree),
        10.0 * rc.flow.tol_res
    );
    if is_sphere_cap(&rc) {
        let cap = SphereCap::default();
        let err = (0..n)
            .map(|i| (st.field.value(i) - cap.exact(grid.position(i))).abs())
            .fold(0.0, f64::max);
        let _ = writeln!(s, "sup error against the analytic cap {err:e}");
    }
    fs::create_dir_all(&dir)?;
    grid.write_snapshot(&st.field, &dir.join(SNAPSHOT_FILE))?;
    fs::write(dir.join(REPORT_FILE), &s)?;
    print!("{s}");
    Ok(match (st.status, agree) {
        (RunStatus::Timeout, _) => EXIT_TIMEOUT,
        (_, false) => EXIT_FAILED_CHECK,
        _ => 0,
    })
}

fn is_sphere_cap(rc: &RunConfig) -> bool {
    let preset = curveflow::flow::FlowConfig::sphere_cap(rc.flow.n_rho, rc.flow.n_theta);
    preset.is_ok_and(|p| p.forcing == rc.flow.forcing && p.domain == rc.flow.domain && p.f == rc.flow.f)
}

fn cmd_oracle(cli: &Cli, factor: usize) -> curveflow::Result<u8> {
    let rc = load(cli)?;
    let dir = out_dir(cli, &rc);
    let mut table = String::from("n_rho,n_theta,radial_nodes,step,t,sup_diff,ratio\n");
    let mut prev: Option<f64> = None;
    for div in [4, 2, 1] {
        let mut cfg = rc.flow.clone();
        cfg.n_rho = (rc.flow.n_rho / div).max(4);
        cfg.n_theta = (rc.flow.n_theta / div).max(8);
        let (_, rows) = compare_with_oracle(&cfg, factor * cfg.n_rho)?;
        let last = rows.last().map(|r| r.sup_diff);
        for r in &rows {
            let ratio = match (prev, r.step == rows.last().map_or(0, |l| l.step)) {
                (Some(p), true) => format!("{:.3}", p / r.sup_diff),
                _ => String::new(),
            };
            let _ = writeln!(
                table,
                "{},{},{},{},{:e},{:e},{ratio}",
                cfg.n_rho,
                cfg.n_theta,
                factor * cfg.n_rho,
                r.step,
                r.t,
                r.sup_diff
            );
        }
        prev = last;
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("oracle.csv"), &table)?;
    print!("{table}");
    Ok(0)
}

fn load_window(dir: &Path) -> curveflow::Result<Vec<ScalarField>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "snap"))
        .collect();
    paths.sort();
    if paths.len() < 3 {
        return Err(Error::Usage(format!(
            "{} holds {} snapshots; three consecutive states are needed",
            dir.display(),
            paths.len()
        )));
    }
    let fields = paths
        .iter()
        .map(|p| read_snapshot(p).map(|(_, f)| f))
        .collect::<curveflow::Result<Vec<_>>>()?;
    // the time differences are first order, so use the finest window that
    // does not start at t = 0, where the initial layer dominates
    let gap = |i: usize| (fields[i + 1].t - fields[i].t).max(fields[i + 2].t - fields[i + 1].t);
    let first = usize::from(fields.len() > 3 && fields[0].t == 0.0);
    let best = (first..fields.len() - 2)
        .min_by(|&a, &b| gap(a).total_cmp(&gap(b)))
        .expect("at least three snapshots");
    Ok(fields[best..best + 3].to_vec())
}

fn cmd_verify(cli: &Cli, trajectory: Option<&Path>) -> curveflow::Result<u8> {
    let rc = load(cli)?;
    let dir = out_dir(cli, &rc);
    let mut flow = rc.flow.clone();
    if flow.barrier.is_none() {
        let domain = curveflow::domain::build_domain(flow.domain)?;
        flow.barrier = Some(BarrierParams::defaults(&domain));
    }
    let window = match trajectory {
        Some(t) => load_window(t)?,
        None => {
            let dt = 0.05;
            let k = 20;
            let opts = RunOptions {
                capture_steps: vec![k - 1, k, k + 1],
                dt_schedule: Some(vec![dt; k + 1]),
            };
            run_flow_with(&flow, &opts)?.captures.into_iter().map(|c| c.1).collect()
        }
    };
    let mut engine = FlowEngine::new(flow.clone())?;
    // snapshots carry no ghost ring
    let window: Vec<ScalarField> = window
        .into_iter()
        .map(|mut f| {
            engine.grid().apply_neumann(&mut f, &flow.forcing);
            f
        })
        .collect();
    let u0 = engine.initial_field();
    let init = engine.check_initial(&u0)?;
    let s0 = engine.state_from(u0, 0)?;
    engine.start(&s0);
    let mut m: f64 = f64::NEG_INFINITY;
    let mut states = Vec::new();
    for f in &window {
        let st = engine.state_from(f.clone(), 0)?;
        for k in 0..engine.grid().n_theta() {
            m = m.max(engine.boundary_second_derivatives(&st, k).0);
        }
        states.push(st);
    }
    let params = flow.barrier.expect("set above");
    let bf = engine.barrier_p(&states[1], m)?;
    let stol = curveflow::flow::stencil_tolerance(engine.grid());
    let ids = verify_evolution_identities(engine.grid(), &flow.f, &flow.forcing, &window)?;
    let checks = [
        (
            "compatibility of initial data",
            init.compatible(),
            format!("residual {:e} (tol {:e})", init.compatibility_residual, init.compatibility_tolerance),
        ),
        (
            "supersolution margin",
            init.supersolution_margin.is_some_and(|m| m >= 0.0),
            format!("{:?}", init.supersolution_margin),
        ),
        ("strict convexity of initial data", init.min_kappa > 0.0, format!("min kappa {:e}", init.min_kappa)),
        ("barrier P >= 0 on collar", bf.min >= -stol, format!("min P {:e} (M = {m:e})", bf.min)),
        ("barrier P = 0 on boundary", bf.boundary_max_abs <= 1e-8, format!("max |P| {:e}", bf.boundary_max_abs)),
        ("barrier q bounds", bf.q_bounds_hold(&params), String::new()),
        (
            "metric evolution identity",
            ids.metric_relative() <= 0.05,
            format!("relative residual {:e}", ids.metric_relative()),
        ),
        (
            "normal evolution identity",
            ids.normal_relative() <= 0.05,
            format!("relative residual {:e}", ids.normal_relative()),
        ),
    ];
    let mut s = String::new();
    let mut all = true;
    for (name, ok, detail) in &checks {
        all &= ok;
        let _ = writeln!(s, "{} {name}: {detail}", pass_fail(*ok));
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(REPORT_FILE), &s)?;
    print!("{s}");
    Ok(if all { 0 } else { EXIT_FAILED_CHECK })
}

fn cmd_props(cli: &Cli, family: &str, n: usize, order: usize, samples: usize) -> curveflow::Result<u8> {
    let family = match family {
        "combined" => Family::Combined { l: order },
        "quotient" => Family::Quotient { l: order },
        "kth_root" => Family::KthRoot { k: order },
        other => {
            return Err(Error::Usage(format!(
                "unknown family `{other}` (expected combined, quotient or kth_root)"
            )))
        }
    };
    let f = CurvatureFunction::new(family, n)?;
    let rep = check_structure(&f, samples, cli.seed);
    println!("{} ({} samples, seed {})", rep.function, rep.sample_count, rep.seed);
    for r in &rep.rows {
        println!("{} {}: worst {:e} {}", pass_fail(r.passed), r.condition.label(), r.worst, r.detail);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(t) = std::env::var("CURVEFLOW_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: CURVEFLOW_THREADS must be a positive integer (got `{t}`)");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    let result = match &cli.command {
        Command::Run { save_every } => cmd_run(&cli, *save_every),
        Command::Stationary => cmd_stationary(&cli),
        Command::Oracle { radial_factor } => cmd_oracle(&cli, *radial_factor),
        Command::Verify { trajectory } => cmd_verify(&cli, trajectory.as_deref()),
        Command::Props {
            family,
            n,
            order,
            samples,
        } => cmd_props(&cli, family, *n, *order, *samples),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
