//! Run artifacts: monitor CSV, final snapshot and a plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::flow::{csv_table, FlowRun, RunStatus};

pub const MONITORS_FILE: &str = "monitors.csv";
pub const SNAPSHOT_FILE: &str = "final_state.snap";
pub const REPORT_FILE: &str = "report.txt";

pub fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Human-readable summary of a run with one PASS/FAIL line per monitor.
pub fn run_report(run: &FlowRun) -> String {
    let cfg = run.engine.config();
    let g = run.engine.grid();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "domain {} {:?}, grid {}x{}, f = {}",
        g.domain().kind_name(),
        g.domain().semi_axes(),
        g.n_rho(),
        g.n_theta(),
        cfg.f.name()
    );
    let _ = writeln!(
        s,
        "status {} after {} steps, t = {:e}, residual {:e} (tol {:e})",
        match run.status {
            RunStatus::Converged => "converged",
            RunStatus::Timeout => "timeout",
        },
        run.final_state.step,
        run.final_state.t(),
        run.final_state.residual(),
        cfg.tol_res
    );
    let init = &run.initial;
    let _ = writeln!(
        s,
        "initial data: compatibility residual {:e} (tol {:e}), supersolution margin {}, min kappa {:e}",
        init.compatibility_residual,
        init.compatibility_tolerance,
        init.supersolution_margin
            .map(|m| format!("{m:e}"))
            .unwrap_or_else(|| "n/a".into()),
        init.min_kappa
    );
    let _ = writeln!(
        s,
        "step halvings {}, positivity control exhausted on {} steps",
        run.summary.total_halvings, run.summary.control_exhausted_steps
    );
    for (name, ok, detail) in run.summary.lines() {
        let _ = writeln!(s, "{} {name}: {detail}", pass_fail(ok));
    }
    if let Some(e) = run.summary.increment_identity_error {
        let _ = writeln!(s, "Euler increment identity error {e:e}");
    }
    s
}

/// Writes `monitors.csv`, `final_state.snap` and `report.txt` into `dir`.
pub fn write_run_outputs(dir: &Path, run: &FlowRun, report: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MONITORS_FILE), csv_table(&run.records))?;
    run.engine
        .grid()
        .write_snapshot(&run.final_state.u, &dir.join(SNAPSHOT_FILE))?;
    fs::write(dir.join(REPORT_FILE), report)?;
    Ok(())
}
