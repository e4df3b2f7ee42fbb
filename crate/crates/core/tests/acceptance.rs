//! Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curveflow::error::Error;
use curveflow::flow::{
    run_flow, run_flow_with, solve_stationary, stencil_tolerance, verify_evolution_identities, FlowConfig,
    RunOptions, RunStatus,
};
use curveflow::geometry::{f_and_fij, GraphMetric, GraphPointData};
use curveflow::presets::{InitialData, InitialProfile, SphereCap};
use curveflow::radial::compare_with_oracle;
use curveflow::symfunc::{check_structure, Condition, ConeVector, CurvatureFunction};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, elapsed: Duration, out: Result<Outcome, Error>) -> bool {
    let (pass, detail) = match out {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {id} ({name}): {} [{:.2}s] {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn structure_suite() -> Result<Outcome, Error> {
    let start = Instant::now();
    let core = [
        Condition::Monotonicity,
        Condition::Concavity,
        Condition::Homogeneity,
        Condition::Normalization,
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (n, l) in [(2, 0), (2, 1), (3, 0), (3, 1)] {
        let combined = check_structure(&CurvatureFunction::combined(n, l)?, 1000, 7);
        for c in core {
            if !combined.row(c).passed {
                pass = false;
                notes.push(format!("combined({n},{l}) {}", c.label()));
            }
        }
        if !combined.row(Condition::Growth).passed {
            pass = false;
            notes.push(format!("combined({n},{l}) growth"));
        }
        // the quotient with l = 0 is H_n^{1/n}, which does grow
        if l > 0 {
            let quotient = check_structure(&CurvatureFunction::quotient(n, l)?, 1000, 7);
            if quotient.row(Condition::Growth).passed {
                pass = false;
                notes.push(format!("quotient({n},{l}) passed growth"));
            }
        }
    }
    let quotient = check_structure(&CurvatureFunction::quotient(3, 2)?, 1000, 7);
    if quotient.row(Condition::Growth).passed {
        pass = false;
        notes.push("quotient(3,2) passed growth".into());
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1.0;
    Ok(Outcome {
        pass,
        detail: if notes.is_empty() {
            format!("all rows as expected, {secs:.3}s")
        } else {
            notes.join("; ")
        },
    })
}

// Test-side geometry: A = g^{-1/2} D2u g^{-1/2} / w via nalgebra's own
// symmetric eigensolver, then f on the spectrum.
fn oracle_f_of_a(a: &DMatrix<f64>, f: &CurvatureFunction) -> f64 {
    let eig = a.clone().symmetric_eigen();
    f.eval(&ConeVector::new(eig.eigenvalues.as_slice().to_vec()).unwrap())
        .unwrap()
}

fn oracle_a(du: &DVector<f64>, d2u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = du.len();
    let g = DMatrix::identity(n, n) + du * du.transpose();
    let eig = g.symmetric_eigen();
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let w = (1.0 + du.norm_squared()).sqrt();
    &inv_sqrt * d2u * &inv_sqrt / w
}

fn oracle_g(du: &DVector<f64>, d2u: &DMatrix<f64>, f: &CurvatureFunction) -> f64 {
    oracle_f_of_a(&oracle_a(du, d2u), f)
}

// Central difference of a function of a symmetric matrix in entry (i, j),
// perturbing (i, j) and (j, i) together and halving off-diagonal results.
fn sym_fd(m: &DMatrix<f64>, i: usize, j: usize, eps: f64, eval: impl Fn(&DMatrix<f64>) -> f64) -> f64 {
    let mut p = m.clone();
    let mut q = m.clone();
    p[(i, j)] += eps;
    q[(i, j)] -= eps;
    if i != j {
        p[(j, i)] += eps;
        q[(j, i)] -= eps;
    }
    let d = (eval(&p) - eval(&q)) / (2.0 * eps);
    if i == j {
        d
    } else {
        0.5 * d
    }
}

fn rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).amax() / analytic.amax().max(1e-12)
}

fn geometry_oracle() -> Result<Outcome, Error> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut metric, mut fij, mut gij, mut gs) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let eps = 1e-6;
    for k in 0..200 {
        let n = 2 + k % 2;
        let f = CurvatureFunction::combined(n, k % n)?;
        let du = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let d2u = &b * b.transpose() + DMatrix::identity(n, n) * rng.random_range(0.1..1.0);

        let gm = curveflow::geometry::graph_quantities(&du);
        let g = GraphMetric::metric(&du);
        metric = metric.max((&gm.gamma_inv * &gm.gamma_inv - &g).amax());

        let point = GraphPointData::new(du.clone(), d2u.clone(), &f)?;
        let a = oracle_a(&du, &d2u);
        let (_, lib_fij) = f_and_fij(&a, &f)?;
        let fd_fij = DMatrix::from_fn(n, n, |i, j| sym_fd(&a, i, j, eps, |m| oracle_f_of_a(m, &f)));
        fij = fij.max(rel_err(&lib_fij, &fd_fij));

        let fd_gij = DMatrix::from_fn(n, n, |i, j| sym_fd(&d2u, i, j, eps, |m| oracle_g(&du, m, &f)));
        gij = gij.max(rel_err(&point.g_upper(), &fd_gij));

        let fd_gs = DMatrix::from_fn(n, 1, |s, _| {
            let mut p = du.clone();
            let mut q = du.clone();
            p[s] += eps;
            q[s] -= eps;
            (oracle_g(&p, &d2u, &f) - oracle_g(&q, &d2u, &f)) / (2.0 * eps)
        });
        let lib_gs = DMatrix::from_column_slice(n, 1, point.g_gradient().as_slice());
        gs = gs.max(rel_err(&lib_gs, &fd_gs));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        pass: metric <= 1e-12 && fij <= 1e-4 && gij <= 1e-4 && gs <= 1e-4 && secs < 5.0,
        detail: format!(
            "metric {metric:.2e}, F^ij {fij:.2e}, G^ij {gij:.2e}, G^s {gs:.2e} over 200 points"
        ),
    })
}

fn sup_error(run_field: impl Fn(usize) -> f64, grid: &curveflow::grid::Grid) -> f64 {
    let cap = SphereCap::default();
    (0..grid.n_owned())
        .map(|i| (run_field(i) - cap.exact(grid.position(i))).abs())
        .fold(0.0, f64::max)
}

fn convergence_config(n: usize) -> Result<FlowConfig, Error> {
    let mut cfg = FlowConfig::sphere_cap(n, n)?;
    cfg.tol_res = 1e-8;
    Ok(cfg)
}

/// Returns the outcome and the run_flow analytic error at each resolution.
fn manufactured_solution() -> Result<(Outcome, Vec<(usize, f64)>), Error> {
    let start = Instant::now();
    let mut flow_err = Vec::new();
    let mut stat_err = Vec::new();
    for n in [32, 64, 128] {
        let cfg = convergence_config(n)?;
        let run = run_flow(&cfg)?;
        let grid = run.engine.grid();
        flow_err.push((n, sup_error(|i| run.final_state.u.value(i), grid)));
        let st = solve_stationary(&cfg)?;
        stat_err.push(sup_error(|i| st.field.value(i), grid));
    }
    let ratios = |e: &[f64]| [e[0] / e[1], e[1] / e[2]];
    let fe: Vec<f64> = flow_err.iter().map(|p| p.1).collect();
    let rf = ratios(&fe);
    let rs = ratios(&stat_err);
    let ok = rf.iter().chain(&rs).all(|r| (r - 4.0).abs() <= 1.0);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        Outcome {
            pass: ok && secs < 60.0,
            detail: format!(
                "flow errors {:.3e} {:.3e} {:.3e} (ratios {:.2} {:.2}); stationary errors {:.3e} {:.3e} {:.3e} (ratios {:.2} {:.2})",
                fe[0], fe[1], fe[2], rf[0], rf[1], stat_err[0], stat_err[1], stat_err[2], rs[0], rs[1]
            ),
        },
        flow_err,
    ))
}

fn oracle_equivalence(analytic: &[(usize, f64)]) -> Result<Outcome, Error> {
    let start = Instant::now();
    let n = 64;
    let reference = analytic
        .iter()
        .find(|p| p.0 == n)
        .map(|p| p.1)
        .ok_or_else(|| Error::Usage("no analytic error at 64".into()))?;
    let (_, rows) = compare_with_oracle(&convergence_config(n)?, 4 * n)?;
    let worst = rows.iter().map(|r| r.sup_diff / reference).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let listing: Vec<String> = rows
        .iter()
        .map(|r| format!("t={:.3} diff {:.3e}", r.t, r.sup_diff))
        .collect();
    Ok(Outcome {
        pass: rows.len() == 3 && worst <= 5.0 && secs < 60.0,
        detail: format!(
            "{n}x{n}: {} vs analytic {reference:.3e}, worst ratio {worst:.2}",
            listing.join(", ")
        ),
    })
}

/// Criteria 5 and 6 share one run.
fn monitors_and_barrier() -> Result<(Outcome, Outcome), Error> {
    let mut cfg = FlowConfig::sphere_cap(64, 64)?;
    cfg.tol_res = 1e-6;
    let run = run_flow(&cfg)?;
    let s = &run.summary;
    let tail_ok = run.records.len() >= 2
        && run.records[run.records.len() - 2..]
            .iter()
            .all(|r| r.residual < 1e-6);
    let monitors = Outcome {
        pass: s.speed_bounds
            && s.monotone_expected
            && s.monotone
            && s.convex
            && s.gradient_on_boundary
            && run.status == RunStatus::Converged
            && tail_ok,
        detail: format!(
            "speed excess {:.2e}, min increment {:.2e}, min kappa {:.3e}, gradient excess {:.2e}, final residuals {:.2e} {:.2e}",
            s.speed_excess,
            s.min_increment,
            s.min_kappa,
            s.gradient_excess,
            run.records[run.records.len().saturating_sub(2)].residual,
            run.records[run.records.len() - 1].residual
        ),
    };
    let tol = stencil_tolerance(run.engine.grid());
    let (min, bmax, q) = (
        s.barrier_min.unwrap_or(f64::NEG_INFINITY),
        s.barrier_boundary_max.unwrap_or(f64::INFINITY),
        s.barrier_q_bounds.unwrap_or(false),
    );
    let barrier = Outcome {
        pass: min >= -tol && bmax <= 1e-8 && q,
        detail: format!(
            "min P {min:.3e} (tolerance {tol:.2e}), boundary max |P| {bmax:.2e}, q bounds {}",
            if q { "hold" } else { "violated" }
        ),
    };
    Ok((monitors, barrier))
}

fn evolution_identities() -> Result<Outcome, Error> {
    let cfg = FlowConfig::sphere_cap(64, 64)?;
    let rel = |dt: f64| -> Result<(f64, f64), Error> {
        let k = (2.0 / dt).round() as usize;
        let opts = RunOptions {
            capture_steps: vec![k - 1, k, k + 1],
            dt_schedule: Some(vec![dt; k + 1]),
        };
        let run = run_flow_with(&cfg, &opts)?;
        let window: Vec<_> = run.captures.into_iter().map(|c| c.1).collect();
        let rep = verify_evolution_identities(run.engine.grid(), &cfg.f, &cfg.forcing, &window)?;
        Ok((rep.metric_relative(), rep.normal_relative()))
    };
    let (m1, n1) = rel(0.05)?;
    let (m2, n2) = rel(0.025)?;
    let (rm, rn) = (m1 / m2, n1 / n2);
    let within = |r: f64| (r - 2.0).abs() <= 0.6;
    Ok(Outcome {
        pass: m1 <= 0.05 && n1 <= 0.05 && m2 <= 0.05 && n2 <= 0.05 && within(rm) && within(rn),
        detail: format!(
            "dt 0.05: metric {m1:.3e} normal {n1:.3e}; dt 0.025: metric {m2:.3e} normal {n2:.3e}; ratios {rm:.2} {rn:.2}"
        ),
    })
}

fn robustness() -> Result<Outcome, Error> {
    let mut cfg = FlowConfig::sphere_cap(32, 32)?;
    cfg.initial = InitialData::new(InitialProfile::Saddle {
        amplitude: 1.0,
        tilt: 0.2,
    });
    let breakdown = match run_flow(&cfg) {
        Err(Error::FlowBreakdown { node, .. }) if node.spectrum.first().is_some_and(|&k| k <= 0.0) => {
            Some(format!("saddle refused at {node}"))
        }
        _ => None,
    };
    let mut cfg = FlowConfig::sphere_cap(32, 32)?;
    cfg.initial = cfg.initial.clone().with_bump(0.05);
    let refused = match run_flow(&cfg) {
        Err(e @ Error::IncompatibleInitialData { .. }) => Some(e.to_string()),
        _ => None,
    };
    Ok(Outcome {
        pass: breakdown.is_some() && refused.is_some(),
        detail: format!(
            "{}; {}",
            breakdown.unwrap_or_else(|| "saddle was not refused".into()),
            refused.unwrap_or_else(|| "bumped data was not refused".into())
        ),
    })
}

fn main() -> ExitCode {
    let mut all = true;

    let t = Instant::now();
    let r = structure_suite();
    all &= report(1, "structure suite", t.elapsed(), r);

    let t = Instant::now();
    let r = geometry_oracle();
    all &= report(2, "geometry oracle", t.elapsed(), r);

    let t = Instant::now();
    let (r, analytic) = match manufactured_solution() {
        Ok((o, a)) => (Ok(o), a),
        Err(e) => (Err(e), Vec::new()),
    };
    all &= report(3, "manufactured solution", t.elapsed(), r);

    let t = Instant::now();
    let r = oracle_equivalence(&analytic);
    all &= report(4, "radial oracle equivalence", t.elapsed(), r);

    let t = Instant::now();
    let (r5, r6) = match monitors_and_barrier() {
        Ok((a, b)) => (Ok(a), Ok(b)),
        Err(e) => {
            let msg = e.to_string();
            (Err(e), Err(Error::Usage(msg)))
        }
    };
    let elapsed = t.elapsed();
    all &= report(5, "theorem monitors", elapsed, r5);
    all &= report(6, "barrier diagnostic", elapsed, r6);

    let t = Instant::now();
    let r = evolution_identities();
    all &= report(7, "evolution identities", t.elapsed(), r);

    let t = Instant::now();
    let r = robustness();
    all &= report(8, "robustness", t.elapsed(), r);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
