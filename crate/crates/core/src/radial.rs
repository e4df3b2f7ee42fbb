//! One-dimensional solver for rotationally symmetric data on a ball of
//! radius `R` in any dimension, used as an independent reference for the
//! planar engine.
//!
//! Nodes sit at `r_j = (j + 1/2) h`, `h = R / (N - 1/2)`, so the last node
//! lies on `r = R`. The mirror ghost `u_{-1} = u_0` encodes `u'(0) = 0`; the
//! outer ghost closes `u'(R) = phi(R, u(R))` with a centered difference.

use crate::domain::DomainKind;
use crate::error::{BreakdownNode, Error, Result};
use crate::flow::{
    run_flow, run_flow_with, FlowConfig, FlowRun, InvariantSummary, MonitorRecord, RunOptions, RunStatus, Scheme,
    MAX_HALVINGS,
};
use crate::forcing::ForcingSpec;
use crate::grid::{Grid, ScalarField};
use crate::operator::{implicit_increment, SparseRows};
use crate::presets::{InitialData, SphereCap};
use crate::symfunc::{ConeVector, CurvatureFunction};

/// Radial and tangential principal curvatures of `u(|x|)`; the tangential
/// one has multiplicity `n - 1`. At `r = 0` both equal `u''(0)`.
pub fn radial_curvatures(r: f64, du: f64, d2u: f64) -> Result<(f64, f64)> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("radius must be nonnegative (got {r})")));
    }
    let w = (1.0 + du * du).sqrt();
    let k_rad = d2u / (w * w * w);
    if r == 0.0 {
        return Ok((k_rad, k_rad));
    }
    Ok((k_rad, du / (r * w)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialConfig {
    pub radius: f64,
    /// Number of nodes `N`.
    pub n_r: usize,
    /// Curvature function; its dimension is the dimension of the ball.
    pub f: CurvatureFunction,
    pub forcing: ForcingSpec,
    pub initial: InitialData,
    pub scheme: Scheme,
    pub safety: f64,
    pub tol_res: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub dt_initial: f64,
    pub dt_growth: f64,
    pub dt_max: f64,
    pub positivity_control: bool,
}

impl RadialConfig {
    /// Sphere-cap problem in dimension `dim`.
    pub fn sphere_cap(dim: usize, n_r: usize) -> Result<Self> {
        let cap = SphereCap::default();
        let f = CurvatureFunction::combined(dim, 1)?;
        let base = FlowConfig::sphere_cap(8, 8)?;
        Ok(Self {
            radius: cap.domain_radius,
            n_r,
            forcing: cap.forcing(&f)?,
            f,
            initial: cap.initial(),
            scheme: base.scheme,
            safety: base.safety,
            tol_res: base.tol_res,
            t_max: base.t_max,
            max_steps: base.max_steps,
            dt_initial: base.dt_initial,
            dt_growth: base.dt_growth,
            dt_max: base.dt_max,
            positivity_control: base.positivity_control,
        })
    }

    /// The radial reduction of a planar configuration on a disk.
    pub fn from_flow(config: &FlowConfig, n_r: usize) -> Result<Self> {
        let domain = crate::domain::build_domain(config.domain)?;
        if domain.kind() != DomainKind::Disk {
            return Err(Error::Usage(format!(
                "the radial solver needs a disk, got {}",
                domain.kind_name()
            )));
        }
        Ok(Self {
            radius: domain.semi_axes().0,
            n_r,
            f: config.f.clone(),
            forcing: config.forcing.clone(),
            initial: config.initial.clone(),
            scheme: config.scheme,
            safety: config.safety,
            tol_res: config.tol_res,
            t_max: config.t_max,
            max_steps: config.max_steps,
            dt_initial: config.dt_initial,
            dt_growth: config.dt_growth,
            dt_max: config.dt_max,
            positivity_control: config.positivity_control,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("radius must be positive (got {})", self.radius)));
        }
        if self.n_r < 4 {
            return Err(Error::Config(format!("need at least 4 radial nodes (got {})", self.n_r)));
        }
        if !(self.tol_res > 0.0 && self.t_max > 0.0 && self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config("tolerance, t_max and safety must be positive (safety <= 1)".into()));
        }
        if !(self.dt_initial > 0.0 && self.dt_max >= self.dt_initial && self.dt_growth >= 1.0) {
            return Err(Error::Config("need 0 < dt_initial <= dt_max and dt_growth >= 1".into()));
        }
        if self.initial.radial(0.0).is_none() {
            return Err(Error::Usage("initial data is not rotationally symmetric".into()));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.radius / (self.n_r as f64 - 0.5)
    }
}

/// Values at the `N` nodes plus the outer ghost.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialState {
    pub values: Vec<f64>,
    pub t: f64,
    pub h: f64,
}

impl RadialState {
    pub fn n_r(&self) -> usize {
        self.values.len() - 1
    }

    pub fn r(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    fn at(&self, j: isize) -> f64 {
        if j < 0 {
            self.values[(-j - 1) as usize]
        } else {
            self.values[j as usize]
        }
    }

    /// Cubic interpolation at radius `r`, using the even extension inside
    /// the first node and the ghost beyond the last.
    pub fn interpolate(&self, r: f64) -> f64 {
        let s = r.abs() / self.h - 0.5;
        let last = self.values.len() as isize - 1;
        let base = (s.floor() as isize - 1).clamp(-2, last - 3);
        let mut v = 0.0;
        for a in 0..4 {
            let ja = base + a;
            let mut l = 1.0;
            for b in 0..4 {
                if b != a {
                    let jb = (base + b) as f64;
                    l *= (s - jb) / (ja as f64 - jb);
                }
            }
            v += l * self.at(ja);
        }
        v
    }
}

/// Geometry at one radial node.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialEval {
    pub du: f64,
    pub d2u: f64,
    pub w: f64,
    pub kappa_rad: f64,
    pub kappa_tan: f64,
    pub f_value: f64,
    pub force: f64,
    pub speed: f64,
    /// `dR/du'` and `dR/du''`
    pub d_speed: [f64; 2],
}

pub struct RadialSolver {
    config: RadialConfig,
}

fn breakdown(j: usize, r: f64, spectrum: Vec<f64>, t: f64, halvings: usize) -> Error {
    Error::FlowBreakdown {
        node: Box::new(BreakdownNode {
            node: j,
            ring: j,
            angle_index: 0,
            position: vec![r],
            spectrum,
            t,
        }),
        halvings,
    }
}

impl RadialSolver {
    pub fn new(config: RadialConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &RadialConfig {
        &self.config
    }

    fn point(&self, r: f64) -> [f64; 2] {
        [r, 0.0]
    }

    pub fn apply_neumann(&self, state: &mut RadialState) {
        let n = state.n_r();
        let flux = self.config.forcing.flux(&self.point(self.config.radius), state.values[n - 1]);
        state.values[n] = state.values[n - 2] + 2.0 * state.h * flux;
    }

    pub fn initial_state(&self) -> RadialState {
        let h = self.config.h();
        let mut s = RadialState {
            values: (0..=self.config.n_r)
                .map(|j| self.config.initial.radial((j as f64 + 0.5) * h).unwrap_or(0.0))
                .collect(),
            t: 0.0,
            h,
        };
        self.apply_neumann(&mut s);
        s
    }

    /// Compatibility residual `|u'(R) - phi(R, u(R))|` from a one-sided
    /// second-order difference.
    pub fn compatibility_residual(&self, state: &RadialState) -> f64 {
        let n = state.n_r();
        let v = &state.values;
        let d = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * state.h);
        (d - self.config.forcing.flux(&self.point(self.config.radius), v[n - 1])).abs()
    }

    pub fn evaluate(&self, state: &RadialState) -> Result<Vec<RadialEval>> {
        let f = &self.config.f;
        let dim = f.dim();
        let h = state.h;
        (0..state.n_r())
            .map(|j| {
                let r = state.r(j);
                let (um, u0, up) = (state.at(j as isize - 1), state.values[j], state.values[j + 1]);
                let du = (up - um) / (2.0 * h);
                let d2u = (up - 2.0 * u0 + um) / (h * h);
                let (kr, kt) = radial_curvatures(r, du, d2u)?;
                let mut k = vec![kt; dim];
                k[0] = kr;
                let cone = ConeVector::new(k.clone()).map_err(|_| breakdown(j, r, k, state.t, 0))?;
                let fv = f.eval(&cone)?;
                let g = f.grad(&cone)?;
                let w = (1.0 + du * du).sqrt();
                let force = self.config.forcing.force(&self.point(r), u0);
                let s = fv - force;
                let gt: f64 = g[1..].iter().sum();
                let w3 = w * w * w;
                let dkr_ddu = -3.0 * du * d2u / (w3 * w * w);
                let dkt_ddu = 1.0 / (r * w3);
                Ok(RadialEval {
                    du,
                    d2u,
                    w,
                    kappa_rad: kr,
                    kappa_tan: kt,
                    f_value: fv,
                    force,
                    speed: w * s,
                    d_speed: [du / w * s + w * (g[0] * dkr_ddu + gt * dkt_ddu), g[0] / (w * w)],
                })
            })
            .collect()
    }

    /// Jacobian `dR/du` over the nodes, ghosts folded in.
    pub fn jacobian(&self, state: &RadialState, evals: &[RadialEval]) -> SparseRows {
        let n = state.n_r();
        let h = state.h;
        let flux_z = self.config.forcing.flux_z(&self.point(self.config.radius), state.values[n - 1]);
        (0..n)
            .map(|j| {
                let e = &evals[j];
                let [a, b] = e.d_speed;
                let cm = -a / (2.0 * h) + b / (h * h);
                let cp = a / (2.0 * h) + b / (h * h);
                let mut c0 = -2.0 * b / (h * h)
                    - e.w * self.config.forcing.force_z(&self.point(state.r(j)), state.values[j]);
                let mut row = Vec::with_capacity(3);
                if j == 0 {
                    c0 += cm;
                } else {
                    row.push((j - 1, cm));
                }
                if j + 1 < n {
                    row.push((j + 1, cp));
                    row.push((j, c0));
                } else {
                    // u_n = u_{n-2} + 2h phi(R, u_{n-1})
                    row[0].1 += cp;
                    row.push((j, c0 + cp * 2.0 * h * flux_z));
                }
                row
            })
            .collect()
    }

    /// Explicit step bound `safety h^2 / (2 n w lambda_max(G))`.
    pub fn stable_dt(&self, evals: &[RadialEval], h: f64) -> Result<f64> {
        let dim = self.config.f.dim() as f64;
        let mut dt = f64::INFINITY;
        for e in evals {
            let mut k = vec![e.kappa_tan; self.config.f.dim()];
            k[0] = e.kappa_rad;
            let g = self.config.f.grad(&ConeVector::new(k)?)?;
            let lam = (g[0] / (e.w * e.w * e.w)).max(g.get(1).copied().unwrap_or(0.0) / e.w);
            dt = dt.min(h * h / (2.0 * dim * e.w * lam));
        }
        Ok(dt * self.config.safety)
    }

    fn candidate(&self, state: &RadialState, evals: &[RadialEval], jac: Option<&SparseRows>, dt: f64) -> Result<RadialState> {
        let mut next = state.clone();
        next.t += dt;
        match jac {
            None => {
                for (v, e) in next.values.iter_mut().zip(evals) {
                    *v += dt * e.speed;
                }
            }
            Some(jac) => {
                let r: Vec<f64> = evals.iter().map(|e| e.speed).collect();
                for (v, d) in next.values.iter_mut().zip(implicit_increment(jac, &r, dt)?) {
                    *v += d;
                }
            }
        }
        self.apply_neumann(&mut next);
        Ok(next)
    }

    /// One step with the same halving and positivity rules as the planar
    /// engine. Returns the new state, its evaluation, the step taken and the
    /// number of halvings.
    pub fn step(
        &self,
        state: &RadialState,
        evals: &[RadialEval],
        dt: f64,
        speed0_min: f64,
    ) -> Result<(RadialState, Vec<RadialEval>, f64, usize)> {
        let jac = match self.config.scheme {
            Scheme::ExplicitEuler => None,
            Scheme::LinearlyImplicit => Some(self.jacobian(state, evals)),
        };
        let floor = match (&jac, self.config.positivity_control && speed0_min >= 0.0) {
            (Some(jac), true) => {
                let min_prev = evals.iter().map(|e| e.speed).fold(f64::INFINITY, f64::min);
                let noise = jac
                    .iter()
                    .map(|row| row.iter().map(|(c, v)| (v * state.values[*c]).abs()).sum::<f64>())
                    .fold(0.0, f64::max)
                    * f64::EPSILON;
                min_prev.min(0.0) - 1e-12 - 10.0 * noise
            }
            _ => f64::NEG_INFINITY,
        };
        let mut dt = dt;
        let mut last_ok = None;
        let mut last_err = None;
        for halvings in 0..=MAX_HALVINGS {
            let next = self.candidate(state, evals, jac.as_ref(), dt)?;
            match self.evaluate(&next) {
                Ok(ev) => {
                    if ev.iter().all(|e| e.speed >= floor) {
                        return Ok((next, ev, dt, halvings));
                    }
                    last_ok = Some((next, ev, dt, halvings));
                }
                Err(Error::FlowBreakdown { node, .. }) => last_err = Some(node),
                Err(e) => return Err(e),
            }
            dt *= 0.5;
        }
        match (last_ok, last_err) {
            (Some(ok), _) => Ok(ok),
            (None, Some(node)) => Err(Error::FlowBreakdown {
                node,
                halvings: MAX_HALVINGS,
            }),
            (None, None) => unreachable!("every attempt either evaluates or breaks down"),
        }
    }

    /// Monitor record in the planar layout; `max_abs_u_taunu` is zero by
    /// symmetry and there is no barrier.
    pub fn monitors(&self, state: &RadialState, evals: &[RadialEval], dt: f64, a_ratio: f64) -> MonitorRecord {
        let n = evals.len();
        let speeds = evals.iter().map(|e| e.speed);
        let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
        let fmin = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        MonitorRecord {
            t: state.t,
            dt,
            max_abs_speed: fmax(&mut speeds.clone().map(f64::abs)),
            max_speed: fmax(&mut speeds.clone()),
            min_speed: fmin(&mut speeds.clone()),
            min_kappa: fmin(&mut evals.iter().map(|e| e.kappa_rad.min(e.kappa_tan))),
            max_kappa: fmax(&mut evals.iter().map(|e| e.kappa_rad.max(e.kappa_tan))),
            min_nu_vert: fmin(&mut evals.iter().map(|e| 1.0 / e.w)),
            residual: fmax(&mut evals.iter().map(|e| (e.f_value - e.force).abs())),
            max_grad_interior: fmax(&mut evals[..n - 1].iter().map(|e| e.du.abs())),
            max_grad_boundary: evals[n - 1].du.abs(),
            max_u_nunu: evals[n - 1].d2u,
            max_abs_u_taunu: 0.0,
            interior_ratio: fmax(
                &mut evals[..n - 1]
                    .iter()
                    .map(|e| e.kappa_rad.max(e.kappa_tan) / (1.0 / e.w - a_ratio)),
            ),
            barrier_min: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialRun {
    pub status: RunStatus,
    pub compatibility_residual: f64,
    pub final_state: RadialState,
    pub records: Vec<MonitorRecord>,
    pub dts: Vec<f64>,
    pub captures: Vec<(usize, RadialState)>,
    pub summary: InvariantSummary,
    pub steps: usize,
}

pub fn run_radial_flow(config: &RadialConfig) -> Result<RadialRun> {
    run_radial_flow_with(config, &RunOptions::default())
}

/// Integrates the radial flow until the residual is below `tol_res` on two
/// consecutive steps, with the invariants of the planar engine checked on
/// every step.
pub fn run_radial_flow_with(config: &RadialConfig, opts: &RunOptions) -> Result<RadialRun> {
    let solver = RadialSolver::new(config.clone())?;
    let mut state = solver.initial_state();
    let compat = solver.compatibility_residual(&state);
    let tol = 10.0 * state.h * state.h;
    if compat > tol {
        return Err(Error::IncompatibleInitialData {
            residual: compat,
            tolerance: tol,
        });
    }
    let mut evals = solver.evaluate(&state)?;
    let s_lo = evals.iter().map(|e| e.speed).fold(f64::INFINITY, f64::min);
    let s_hi = evals.iter().map(|e| e.speed).fold(f64::NEG_INFINITY, f64::max);
    let a_ratio = 0.5 * evals.iter().map(|e| 1.0 / e.w).fold(f64::INFINITY, f64::min);
    let eps = 1e-8 * (1.0 + s_lo.abs().max(s_hi.abs()));
    let margin = evals.iter().map(|e| e.f_value - e.force).fold(f64::INFINITY, f64::min);
    let mut summary = InvariantSummary {
        speed_excess: f64::NEG_INFINITY,
        speed_bounds: true,
        min_increment: f64::INFINITY,
        monotone_expected: margin >= 0.0,
        monotone: true,
        min_kappa: f64::INFINITY,
        convex: true,
        gradient_excess: f64::NEG_INFINITY,
        gradient_on_boundary: true,
        barrier_min: None,
        barrier_boundary_max: None,
        barrier_q_bounds: None,
        barrier_nonnegative: None,
        bounds_stabilized: true,
        increment_identity_error: None,
        total_halvings: 0,
        control_exhausted_steps: 0,
    };
    let mut records = Vec::new();
    let mut observe = |rec: MonitorRecord, summary: &mut InvariantSummary| {
        let excess = (s_lo.min(0.0) - rec.min_speed).max(rec.max_speed - s_hi.max(0.0));
        summary.speed_excess = summary.speed_excess.max(excess);
        summary.speed_bounds &= excess <= eps;
        summary.min_kappa = summary.min_kappa.min(rec.min_kappa);
        summary.convex &= rec.min_kappa > 0.0;
        let gx = rec.max_grad_interior - rec.max_grad_boundary;
        summary.gradient_excess = summary.gradient_excess.max(gx);
        summary.gradient_on_boundary &= gx <= 1e-10;
        records.push(rec);
    };
    observe(solver.monitors(&state, &evals, 0.0, a_ratio), &mut summary);
    let mut captures = Vec::new();
    if opts.capture_steps.contains(&0) {
        captures.push((0, state.clone()));
    }
    let residual = |ev: &[RadialEval]| ev.iter().map(|e| (e.f_value - e.force).abs()).fold(0.0, f64::max);
    let mut below = usize::from(residual(&evals) < config.tol_res);
    let mut dts = Vec::new();
    let mut dt_next = config.dt_initial;
    let mut step = 0;
    let status = loop {
        if below >= 2 {
            break RunStatus::Converged;
        }
        if state.t >= config.t_max || step >= config.max_steps {
            break RunStatus::Timeout;
        }
        let dt = match (&opts.dt_schedule, config.scheme) {
            (Some(s), _) if step >= s.len() => break RunStatus::Timeout,
            (Some(s), _) => s[step],
            (None, Scheme::ExplicitEuler) => solver.stable_dt(&evals, state.h)?,
            (None, Scheme::LinearlyImplicit) => dt_next,
        };
        let dt = if opts.dt_schedule.is_none() {
            dt.min(config.t_max - state.t).max(1e-300)
        } else {
            dt
        };
        let (next, next_evals, taken, halvings) = solver.step(&state, &evals, dt, s_lo)?;
        if opts.dt_schedule.is_some() && halvings > 0 {
            return Err(Error::Usage(format!("replayed step {step} needed {halvings} halvings")));
        }
        summary.total_halvings += halvings;
        let min_inc = next.values[..state.n_r()]
            .iter()
            .zip(&state.values)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        summary.min_increment = summary.min_increment.min(min_inc);
        summary.monotone &= min_inc >= -1e-10;
        dts.push(taken);
        dt_next = if halvings > 0 {
            taken
        } else {
            (taken * config.dt_growth).min(config.dt_max)
        };
        state = next;
        evals = next_evals;
        step += 1;
        if opts.capture_steps.contains(&step) {
            captures.push((step, state.clone()));
        }
        observe(solver.monitors(&state, &evals, taken, a_ratio), &mut summary);
        below = if residual(&evals) < config.tol_res { below + 1 } else { 0 };
    };
    Ok(RadialRun {
        status,
        compatibility_residual: compat,
        final_state: state,
        records,
        dts,
        captures,
        summary,
        steps: step,
    })
}

/// Lifts a radial profile onto a planar grid over a disk by cubic
/// interpolation in `|x|`.
pub fn lift_to_grid(state: &RadialState, grid: &Grid) -> Result<ScalarField> {
    if grid.domain().kind() != DomainKind::Disk {
        return Err(Error::Usage(format!(
            "lifting needs a disk grid, got {}",
            grid.domain().kind_name()
        )));
    }
    Ok(grid.field_from_fn(|x| state.interpolate(x[0].hypot(x[1])), state.t))
}

/// Sup-difference between the planar run and the lifted radial solution
/// at one matched time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub step: usize,
    pub t: f64,
    pub sup_diff: f64,
}

/// Runs the planar flow, replays its accepted step sizes in the radial
/// solver with `radial_nodes` nodes, and compares the two at a quarter, half
/// and all of the steps.
pub fn compare_with_oracle(config: &FlowConfig, radial_nodes: usize) -> Result<(FlowRun, Vec<OracleRow>)> {
    let rc = RadialConfig::from_flow(config, radial_nodes)?;
    let first = run_flow(config)?;
    let steps = first.dts.len();
    let mut capture_steps = vec![(steps / 4).max(1), (steps / 2).max(1), steps.max(1)];
    capture_steps.dedup();
    let opts = RunOptions {
        capture_steps,
        dt_schedule: Some(first.dts.clone()),
    };
    let planar = run_flow_with(config, &opts)?;
    let radial = run_radial_flow_with(&rc, &opts)?;
    let grid = planar.engine.grid();
    let mut rows = Vec::new();
    for (step, field) in &planar.captures {
        let Some((_, rs)) = radial.captures.iter().find(|(s, _)| s == step) else {
            continue;
        };
        let lifted = lift_to_grid(rs, grid)?;
        let sup_diff = (0..grid.n_owned())
            .map(|i| (lifted.value(i) - field.value(i)).abs())
            .fold(0.0, f64::max);
        rows.push(OracleRow {
            step: *step,
            t: field.t,
            sup_diff,
        });
    }
    Ok((planar, rows))
}

/// Monitor table in the planar CSV layout with a trailing `radial` flag.
pub fn csv_table(records: &[MonitorRecord]) -> String {
    let mut s = format!("{},radial\n", MonitorRecord::CSV_HEADER);
    for r in records {
        s.push_str(&r.csv_row());
        s.push_str(",1\n");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;

    #[test]
    fn curvatures_of_sphere_and_paraboloid() {
        for r in [0.1, 0.5, 0.9, 1.5] {
            let rho: f64 = 2.0;
            let s = (rho * rho - r * r).sqrt();
            let (kr, kt) = radial_curvatures(r, r / s, rho * rho / (s * s * s)).unwrap();
            assert!((kr - 0.5).abs() < 1e-14 && (kt - 0.5).abs() < 1e-14);
            let (kr, kt) = radial_curvatures(r, r, 1.0).unwrap();
            assert!((kr - (1.0 + r * r).powf(-1.5)).abs() < 1e-14);
            assert!((kt - (1.0 + r * r).powf(-0.5)).abs() < 1e-14);
        }
        assert_eq!(radial_curvatures(0.0, 0.0, 0.7).unwrap(), (0.7, 0.7));
        assert!(radial_curvatures(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut cfg = RadialConfig::sphere_cap(3, 12).unwrap();
        cfg.forcing = ForcingSpec::new(
            crate::forcing::ForceTerm::Affine { base: 0.4, slope: 0.3 },
            cfg.forcing.flux.clone(),
        );
        let solver = RadialSolver::new(cfg).unwrap();
        let s = solver.initial_state();
        let ev = solver.evaluate(&s).unwrap();
        let jac = solver.jacobian(&s, &ev);
        let n = s.n_r();
        let h = 1e-6;
        for col in 0..n {
            let shifted = |d: f64| {
                let mut t = s.clone();
                t.values[col] += d;
                solver.apply_neumann(&mut t);
                solver.evaluate(&t).unwrap()
            };
            let (p, m) = (shifted(h), shifted(-h));
            for row in 0..n {
                let fd = (p[row].speed - m[row].speed) / (2.0 * h);
                let an: f64 = jac[row].iter().filter(|(c, _)| *c == col).map(|(_, v)| v).sum();
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "({row},{col}) {fd} vs {an}");
            }
        }
    }

    fn stationary(dim: usize, n_r: usize) -> (RadialConfig, RadialRun) {
        let mut cfg = RadialConfig::sphere_cap(dim, n_r).unwrap();
        cfg.tol_res = 1e-11;
        let run = run_radial_flow(&cfg).unwrap();
        assert_eq!(run.status, RunStatus::Converged);
        (cfg, run)
    }

    #[test]
    fn sphere_approach_is_stationary_at_the_end() {
        for dim in [2, 3] {
            let (cfg, run) = stationary(dim, 40);
            assert!(run.summary.speed_bounds && run.summary.monotone && run.summary.convex);
            let solver = RadialSolver::new(RadialConfig {
                scheme: Scheme::ExplicitEuler,
                ..cfg
            })
            .unwrap();
            let ev = solver.evaluate(&run.final_state).unwrap();
            let dt = solver.stable_dt(&ev, run.final_state.h).unwrap();
            let (next, _, _, _) = solver.step(&run.final_state, &ev, dt, 0.0).unwrap();
            for (a, b) in next.values.iter().zip(&run.final_state.values) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sphere_error_is_second_order() {
        let cap = SphereCap::default();
        let err = |n| {
            let (_, run) = stationary(2, n);
            let s = &run.final_state;
            (0..s.n_r())
                .map(|j| (s.values[j] - cap.exact_radial(s.r(j))).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(32), err(64));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn explicit_flow_keeps_the_invariants() {
        let mut cfg = RadialConfig::sphere_cap(2, 10).unwrap();
        cfg.scheme = Scheme::ExplicitEuler;
        cfg.max_steps = 2000;
        let run = run_radial_flow(&cfg).unwrap();
        assert!(run.summary.speed_bounds, "{:?}", run.summary);
        assert!(run.summary.monotone && run.summary.convex && run.summary.gradient_on_boundary);
    }

    #[test]
    fn lifting() {
        let grid = Grid::new(Domain::disk(1.0).unwrap(), 12, 16).unwrap();
        let h = 1.0 / 39.5;
        let make = |f: &dyn Fn(f64) -> f64| RadialState {
            values: (0..=40).map(|j| f((j as f64 + 0.5) * h)).collect(),
            t: 0.0,
            h,
        };
        let c = lift_to_grid(&make(&|_| 2.5), &grid).unwrap();
        assert!(c.absolute().iter().all(|v| (v - 2.5).abs() < 1e-13));

        let cap = SphereCap::default();
        let s = make(&|r| cap.exact_radial(r));
        let lifted = lift_to_grid(&s, &grid).unwrap();
        let worst = (0..grid.n_owned())
            .map(|i| (lifted.value(i) - cap.exact(grid.position(i))).abs())
            .fold(0.0, f64::max);
        assert!(worst < h.powi(4), "interpolation error {worst}");

        // ring averages of the lift return the profile
        for j in 0..grid.n_rho() {
            let avg = (0..grid.n_theta())
                .map(|k| lifted.value(grid.index(j, k)))
                .sum::<f64>()
                / grid.n_theta() as f64;
            assert!((avg - s.interpolate(grid.rho(j))).abs() < 1e-13);
        }

        let ell = Grid::new(Domain::ellipse(1.2, 1.0).unwrap(), 8, 8).unwrap();
        assert!(matches!(lift_to_grid(&s, &ell), Err(Error::Usage(_))));
    }

    #[test]
    fn planar_run_matches_the_oracle() {
        let cfg = FlowConfig::sphere_cap(16, 16).unwrap();
        let (run, rows) = compare_with_oracle(&cfg, 64).unwrap();
        assert_eq!(rows.len(), 3);
        let cap = SphereCap::default();
        let g = run.engine.grid();
        let analytic = (0..g.n_owned())
            .map(|i| (run.final_state.u.value(i) - cap.exact(g.position(i))).abs())
            .fold(0.0, f64::max);
        for r in rows {
            assert!(r.sup_diff <= 5.0 * analytic, "{r:?} vs {analytic}");
        }
    }

    #[test]
    fn csv_has_radial_flag() {
        let cfg = RadialConfig::sphere_cap(2, 8).unwrap();
        let run = run_radial_flow(&cfg).unwrap();
        let table = csv_table(&run.records);
        let mut lines = table.lines();
        assert!(lines.next().unwrap().ends_with(",radial"));
        let cols = MonitorRecord::CSV_HEADER.split(',').count() + 1;
        assert!(lines.all(|l| l.split(',').count() == cols && l.ends_with(",1")));
    }
}
