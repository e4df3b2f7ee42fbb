//! Time integration of the flow with runtime monitors, the boundary barrier
//! diagnostic and the stationary solve.

use rayon::prelude::*;

use crate::domain::{build_domain, Domain, DomainSpec};
use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;
use crate::geometry::{curvature_matrix, principal_curvatures};
use crate::grid::{Grid, NodeKind, ScalarField};
use crate::operator::{breakdown, evaluate, implicit_increment, jacobian, NodeEval, SparseRows};
use crate::presets::{InitialData, SphereCap};
use crate::symfunc::CurvatureFunction;

/// Maximum number of step halvings before a step is given up.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `u <- u + dt w (F - Phi)`
    ExplicitEuler,
    /// `(I - dt J) delta = dt w (F - Phi)` with the analytic Jacobian `J`.
    LinearlyImplicit,
}

/// Constants of the barrier `P = Du.Dq - phi - (A + M/2) q`,
/// `q = -d + N d^2`, on the collar `d < mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub a_bar: f64,
    pub n: f64,
    pub mu: f64,
}

impl BarrierParams {
    /// `mu = 0.3 reach`, `N mu = 1/8`, `A = 10`.
    pub fn defaults(domain: &Domain) -> Self {
        let mu = 0.3 * domain.reach();
        Self {
            a_bar: 10.0,
            n: 1.0 / (8.0 * mu),
            mu,
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let reach = domain.reach();
        if !(self.mu > 0.0 && self.mu < reach) {
            return Err(Error::Config(format!(
                "barrier mu={} must lie in (0, reach={reach})",
                self.mu
            )));
        }
        if !(self.n >= 0.0 && self.n * self.mu <= 0.125 * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "barrier N={} must satisfy 0 <= N mu <= 1/8",
                self.n
            )));
        }
        if !(self.a_bar > 0.0) {
            return Err(Error::Config(format!("barrier A={} must be positive", self.a_bar)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub domain: DomainSpec,
    pub n_rho: usize,
    pub n_theta: usize,
    pub f: CurvatureFunction,
    pub forcing: ForcingSpec,
    pub initial: InitialData,
    pub scheme: Scheme,
    /// Safety factor for the explicit step size.
    pub safety: f64,
    pub tol_res: f64,
    pub t_max: f64,
    pub max_steps: usize,
    /// Record monitors every this many steps.
    pub monitor_every: usize,
    pub dt_initial: f64,
    pub dt_growth: f64,
    pub dt_max: f64,
    /// Reject implicit steps that push the speed below its running lower
    /// bound (applies when the initial speed is nonnegative).
    pub positivity_control: bool,
    pub barrier: Option<BarrierParams>,
}

impl FlowConfig {
    /// Sphere cap over the unit disk approaching the sphere of radius 2.
    pub fn sphere_cap(n_rho: usize, n_theta: usize) -> Result<Self> {
        let cap = SphereCap::default();
        let f = CurvatureFunction::combined(2, 1)?;
        let domain = DomainSpec::Disk {
            radius: cap.domain_radius,
        };
        Ok(Self {
            forcing: cap.forcing(&f)?,
            initial: cap.initial(),
            barrier: Some(BarrierParams::defaults(&build_domain(domain)?)),
            ..Self::base(domain, n_rho, n_theta, f)
        })
    }

    /// Problem-independent defaults; forcing and initial data still to be set.
    pub fn base(domain: DomainSpec, n_rho: usize, n_theta: usize, f: CurvatureFunction) -> Self {
        Self {
            domain,
            n_rho,
            n_theta,
            f,
            forcing: ForcingSpec::new(
                crate::forcing::ForceTerm::Constant { value: 1.0 },
                crate::forcing::FluxTerm::linear(0.0, 1.0, 0.0),
            ),
            initial: InitialData::new(crate::presets::InitialProfile::Paraboloid {
                height: 0.0,
                curvature: 1.0,
            }),
            scheme: Scheme::LinearlyImplicit,
            safety: 0.5,
            tol_res: 1e-6,
            t_max: 1e4,
            max_steps: 20_000,
            monitor_every: 1,
            dt_initial: 1e-2,
            dt_growth: 1.5,
            dt_max: 1e6,
            positivity_control: true,
            barrier: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tol_res > 0.0) {
            return bad(format!("tol_res must be positive (got {})", self.tol_res));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety factor must lie in (0, 1] (got {})", self.safety));
        }
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be positive (got {})", self.t_max));
        }
        if !(self.dt_initial > 0.0 && self.dt_max >= self.dt_initial && self.dt_growth >= 1.0) {
            return bad("need 0 < dt_initial <= dt_max and dt_growth >= 1".into());
        }
        if self.monitor_every == 0 {
            return bad("monitor cadence must be at least 1".into());
        }
        if self.f.dim() != 2 {
            return bad(format!("the grid solver needs n = 2 (got n = {})", self.f.dim()));
        }
        let domain = build_domain(self.domain)?;
        if let Some(b) = &self.barrier {
            b.validate(&domain)?;
        }
        if let crate::presets::InitialProfile::Values(v) = &self.initial.profile {
            if v.len() != self.n_rho * self.n_theta {
                return bad(format!(
                    "initial field has {} values, grid has {} nodes",
                    v.len(),
                    self.n_rho * self.n_theta
                ));
            }
        }
        Ok(())
    }

    /// Samples the hypotheses on `Phi` and `phi` over the grid nodes times
    /// `[-z_bound, z_bound]`.
    pub fn check_hypotheses(&self, z_bound: f64) -> Result<()> {
        let grid = Grid::from_spec(self.domain, self.n_rho.min(16), self.n_theta.min(16))?;
        let pts: Vec<Vec<f64>> = (0..grid.n_owned()).map(|i| grid.position(i).to_vec()).collect();
        let v = self.forcing.validate(&pts, z_bound);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Hypotheses(v))
        }
    }
}

/// Quantities certified at one sample of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub t: f64,
    pub dt: f64,
    pub max_abs_speed: f64,
    pub max_speed: f64,
    pub min_speed: f64,
    pub min_kappa: f64,
    pub max_kappa: f64,
    pub min_nu_vert: f64,
    /// `sup |F - Phi|`
    pub residual: f64,
    pub max_grad_interior: f64,
    pub max_grad_boundary: f64,
    pub max_u_nunu: f64,
    pub max_abs_u_taunu: f64,
    /// `max kappa_max / (nu^{n+1} - a)` over interior nodes.
    pub interior_ratio: f64,
    pub barrier_min: Option<f64>,
}

impl MonitorRecord {
    pub const CSV_HEADER: &'static str = "t,dt,max_abs_speed,max_speed,min_speed,min_kappa,max_kappa,min_nu_vert,residual,max_grad_interior,max_grad_boundary,max_u_nunu,max_abs_u_taunu,interior_ratio,barrier_min";

    pub fn csv_row(&self) -> String {
        let v = [
            self.t,
            self.dt,
            self.max_abs_speed,
            self.max_speed,
            self.min_speed,
            self.min_kappa,
            self.max_kappa,
            self.min_nu_vert,
            self.residual,
            self.max_grad_interior,
            self.max_grad_boundary,
            self.max_u_nunu,
            self.max_abs_u_taunu,
            self.interior_ratio,
        ];
        let mut s: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        s.push(self.barrier_min.map(|b| format!("{b:e}")).unwrap_or_default());
        s.join(",")
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.dt,
            self.max_abs_speed,
            self.max_speed,
            self.min_speed,
            self.min_kappa,
            self.max_kappa,
            self.min_nu_vert,
            self.residual,
            self.max_grad_interior,
            self.max_grad_boundary,
            self.max_u_nunu,
            self.max_abs_u_taunu,
            self.interior_ratio,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.barrier_min.is_none_or(|b| b.is_finite())
    }
}

pub fn csv_table(records: &[MonitorRecord]) -> String {
    let mut s = String::from(MonitorRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: ScalarField,
    pub step: usize,
    pub evals: Vec<NodeEval>,
}

impl FlowState {
    pub fn t(&self) -> f64 {
        self.u.t
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.evals.iter().map(|e| e.speed).collect()
    }

    pub fn residual(&self) -> f64 {
        self.evals
            .iter()
            .map(|e| (e.f_value - e.force).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialReport {
    /// `max |nu.Du0 - phi(x, u0)|` over boundary nodes (one-sided stencil).
    pub compatibility_residual: f64,
    pub compatibility_tolerance: f64,
    /// `min F(A[u0]) - Phi(x, u0)`; `None` when `u0` is not convex.
    pub supersolution_margin: Option<f64>,
    pub min_kappa: f64,
    pub min_kappa_node: usize,
    /// Smallest curvature off the boundary ring, where the ghost ring plays
    /// no part.
    pub min_kappa_interior: f64,
    pub min_kappa_interior_node: usize,
}

impl InitialReport {
    pub fn compatible(&self) -> bool {
        self.compatibility_residual <= self.compatibility_tolerance
    }
}

/// Tolerance for quantities that are exact up to the stencil error.
pub fn stencil_tolerance(grid: &Grid) -> f64 {
    10.0 * grid.h_rho() * grid.h_rho()
}

/// Barrier field on the collar.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierField {
    pub nodes: Vec<usize>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub dq_norm: Vec<f64>,
    pub min: f64,
    pub argmin: usize,
    /// `max |P|` over boundary nodes.
    pub boundary_max_abs: f64,
    /// `M` used in `Q = (A + M/2) q`.
    pub m: f64,
}

impl BarrierField {
    /// `-mu + N mu^2 <= q <= 0` and `1/2 <= |Dq| <= 2` on the collar.
    pub fn q_bounds_hold(&self, params: &BarrierParams) -> bool {
        let lo = -params.mu + params.n * params.mu * params.mu;
        self.q.iter().all(|&q| q >= lo - 1e-14 && q <= 1e-14)
            && self.dq_norm.iter().all(|&d| (0.5..=2.0).contains(&d))
    }
}

/// Cached boundary distances on the collar.
#[derive(Debug, Clone)]
struct Collar {
    nodes: Vec<usize>,
    d: Vec<f64>,
    grad: Vec<[f64; 2]>,
}

/// Running context shared by the monitors of one run.
#[derive(Debug, Clone)]
pub struct FlowEngine {
    config: FlowConfig,
    grid: Grid,
    collar: Option<Collar>,
    /// `a` in the interior ratio, half the initial minimum of `nu^{n+1}`.
    pub a_ratio: f64,
    pub speed0: (f64, f64),
    pub m_running: f64,
}

pub struct StepOutcome {
    pub state: FlowState,
    pub dt: f64,
    pub halvings: usize,
    /// The positivity control could not be met within the halving budget.
    pub control_exhausted: bool,
}

impl FlowEngine {
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let grid = Grid::from_spec(config.domain, config.n_rho, config.n_theta)?;
        let collar = match &config.barrier {
            Some(b) => {
                let nodes = grid.omega_mu_nodes(b.mu)?;
                let mut d = Vec::with_capacity(nodes.len());
                let mut grad = Vec::with_capacity(nodes.len());
                for &i in &nodes {
                    let dist = if grid.kind(i) == NodeKind::Boundary {
                        let nu = grid.normal(grid.ring_angle(i).1);
                        (0.0, [-nu[0], -nu[1]])
                    } else {
                        let dd = grid.domain().distance(grid.position(i))?;
                        (dd.d, dd.grad)
                    };
                    d.push(dist.0);
                    grad.push(dist.1);
                }
                Some(Collar { nodes, d, grad })
            }
            None => None,
        };
        Ok(Self {
            config,
            grid,
            collar,
            a_ratio: 0.0,
            speed0: (0.0, 0.0),
            m_running: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Initial field with the ghost ring filled from the Neumann condition.
    pub fn initial_field(&self) -> ScalarField {
        let init = &self.config.initial;
        let mut u = match &init.profile {
            crate::presets::InitialProfile::Values(v) => {
                let mut vals = v.clone();
                vals.resize(self.grid.n_ext(), 0.0);
                for (i, x) in self.grid.positions().iter().enumerate().take(v.len()) {
                    vals[i] += init.bump * x[0] * (x[0] * x[0] + x[1] * x[1]);
                }
                ScalarField::from_absolute(vals, 0.0)
            }
            _ => self.grid.field_from_fn(|x| init.eval(x).unwrap_or(0.0), 0.0),
        };
        self.grid.apply_neumann(&mut u, &self.config.forcing);
        u
    }

    pub fn evaluate(&self, u: &ScalarField) -> Result<Vec<NodeEval>> {
        evaluate(&self.grid, &self.config.f, &self.config.forcing, u)
    }

    pub fn state_from(&self, u: ScalarField, step: usize) -> Result<FlowState> {
        let evals = self.evaluate(&u)?;
        Ok(FlowState { u, step, evals })
    }

    /// Compatibility residual, supersolution margin and convexity margin of
    /// the initial field.
    pub fn check_initial(&self, u0: &ScalarField) -> Result<InitialReport> {
        let g = &self.grid;
        let forcing = &self.config.forcing;
        let compat = (0..g.n_theta())
            .map(|k| {
                let i = g.index(g.n_rho() - 1, k);
                (g.normal_derivative_one_sided(&u0.values, k) - forcing.flux(&g.position(i), u0.value(i))).abs()
            })
            .fold(0.0, f64::max);
        let derivs = g.differentiate(&u0.values);
        let kappas: Vec<f64> = derivs
            .par_iter()
            .map(|d| {
                let du = nalgebra::DVector::from_column_slice(&d.du);
                let d2u = nalgebra::DMatrix::from_row_slice(2, 2, &[d.d2u[0][0], d.d2u[0][1], d.d2u[1][0], d.d2u[1][1]]);
                principal_curvatures(&curvature_matrix(&du, &d2u)).values[0]
            })
            .collect();
        let argmin = |ks: &[f64]| {
            ks.iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, k)| if k < acc.1 { (i, k) } else { acc })
        };
        let (min_kappa_node, min_kappa) = argmin(&kappas);
        let (min_kappa_interior_node, min_kappa_interior) = argmin(&kappas[..g.index(g.n_rho() - 1, 0)]);
        let margin = if min_kappa > 0.0 {
            self.evaluate(u0)
                .ok()
                .map(|ev| ev.iter().map(|e| e.f_value - e.force).fold(f64::INFINITY, f64::min))
        } else {
            None
        };
        Ok(InitialReport {
            compatibility_residual: compat,
            compatibility_tolerance: stencil_tolerance(g),
            supersolution_margin: margin,
            min_kappa,
            min_kappa_node,
            min_kappa_interior,
            min_kappa_interior_node,
        })
    }

    /// Refuses to start from non-convex or incompatible data.
    pub fn admit_initial(&self, u0: &ScalarField, report: &InitialReport) -> Result<()> {
        let g = &self.grid;
        let spectrum_at = |i: usize| {
            let d = g.stencil(i).apply(&u0.values);
            let du = nalgebra::DVector::from_column_slice(&d.du);
            let d2u = nalgebra::DMatrix::from_row_slice(2, 2, &[d.d2u[0][0], d.d2u[0][1], d.d2u[1][0], d.d2u[1][1]]);
            principal_curvatures(&curvature_matrix(&du, &d2u)).values.as_slice().to_vec()
        };
        if report.min_kappa_interior <= 0.0 {
            let i = report.min_kappa_interior_node;
            return Err(breakdown(g, i, spectrum_at(i), u0.t, 0));
        }
        if !report.compatible() {
            return Err(Error::IncompatibleInitialData {
                residual: report.compatibility_residual,
                tolerance: report.compatibility_tolerance,
            });
        }
        if report.min_kappa <= 0.0 {
            return Err(breakdown(g, report.min_kappa_node, spectrum_at(report.min_kappa_node), u0.t, 0));
        }
        Ok(())
    }

    /// Explicit step bound `safety * min h_loc^2 / (2 n w lambda_max(G))`.
    pub fn stable_dt(&self, state: &FlowState) -> f64 {
        let n = 2.0;
        state
            .evals
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let g = e.g_upper;
                let tr = 0.5 * (g[0][0] + g[1][1]);
                let lam = tr + (0.5 * (g[0][0] - g[1][1])).hypot(g[0][1]);
                let h = self.grid.local_spacing(i);
                h * h / (2.0 * n * e.w * lam)
            })
            .reduce(|| f64::INFINITY, f64::min)
            * self.config.safety
    }

    fn candidate(&self, state: &FlowState, jac: Option<&SparseRows>, dt: f64) -> Result<ScalarField> {
        let n = self.grid.n_owned();
        let mut values = state.u.values.clone();
        match jac {
            None => {
                for (v, e) in values[..n].iter_mut().zip(&state.evals) {
                    *v += dt * e.speed;
                }
            }
            Some(jac) => {
                let delta = implicit_increment(jac, &state.speeds(), dt)?;
                for (v, d) in values[..n].iter_mut().zip(&delta) {
                    *v += d;
                }
            }
        }
        // keep the stored values near zero at the pole, where the stencil
        // weights are largest
        let shift = values[0];
        for v in values.iter_mut() {
            *v -= shift;
        }
        let mut u = ScalarField {
            values,
            t: state.u.t + dt,
            offset: state.u.offset + shift,
        };
        self.grid.apply_neumann(&mut u, &self.config.forcing);
        Ok(u)
    }

    /// Rounding level of the discrete speed, `eps max_i sum_j |J_ij| |u_j|`.
    pub fn speed_noise(&self, state: &FlowState, jac: &SparseRows) -> f64 {
        let u = &state.u.values;
        jac.par_iter()
            .map(|row| row.iter().map(|(j, v)| (v * u[*j]).abs()).sum::<f64>())
            .reduce(|| 0.0, f64::max)
            * f64::EPSILON
    }

    /// One step of size `dt`, halved on cone violation (and, for the implicit
    /// scheme under positivity control, on a drop of the speed minimum below
    /// `min(min previous speed, 0)` by more than the rounding level).
    pub fn step(&self, state: &FlowState, dt: f64) -> Result<StepOutcome> {
        let mut dt = dt;
        let jac = match self.config.scheme {
            Scheme::ExplicitEuler => None,
            Scheme::LinearlyImplicit => Some(jacobian(
                &self.grid,
                &self.config.forcing,
                &state.evals,
                &state.u,
            )),
        };
        let control = self.config.positivity_control && jac.is_some() && self.speed0.0 >= 0.0;
        let floor = if control {
            let min_prev = state.evals.iter().map(|e| e.speed).fold(f64::INFINITY, f64::min);
            let noise = self.speed_noise(state, jac.as_ref().expect("implicit scheme"));
            min_prev.min(0.0) - 1e-12 - 10.0 * noise
        } else {
            f64::NEG_INFINITY
        };
        let mut last_ok: Option<(FlowState, f64)> = None;
        for halvings in 0..=MAX_HALVINGS {
            let u = self.candidate(state, jac.as_ref(), dt)?;
            match self.evaluate(&u) {
                Ok(evals) => {
                    let next = FlowState {
                        u,
                        step: state.step + 1,
                        evals,
                    };
                    let min_new = next.evals.iter().map(|e| e.speed).fold(f64::INFINITY, f64::min);
                    if min_new >= floor {
                        return Ok(StepOutcome {
                            state: next,
                            dt,
                            halvings,
                            control_exhausted: false,
                        });
                    }
                    last_ok = Some((next, dt));
                }
                Err(Error::FlowBreakdown { node, .. }) => {
                    if halvings == MAX_HALVINGS {
                        if let Some((next, dt)) = last_ok {
                            return Ok(StepOutcome {
                                state: next,
                                dt,
                                halvings,
                                control_exhausted: true,
                            });
                        }
                        return Err(Error::FlowBreakdown {
                            node,
                            halvings: MAX_HALVINGS,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
            dt *= 0.5;
        }
        let (next, dt) = last_ok.expect("loop exits only after a successful evaluation");
        Ok(StepOutcome {
            state: next,
            dt,
            halvings: MAX_HALVINGS,
            control_exhausted: true,
        })
    }

    /// Boundary `u_nunu` and `u_taunu` at angle index `k`.
    pub fn boundary_second_derivatives(&self, state: &FlowState, k: usize) -> (f64, f64) {
        let i = self.grid.index(self.grid.n_rho() - 1, k);
        let h = state.evals[i].derivs.d2u;
        let nu = self.grid.normal(k);
        let tau = [-nu[1], nu[0]];
        let hn = [h[0][0] * nu[0] + h[0][1] * nu[1], h[1][0] * nu[0] + h[1][1] * nu[1]];
        (nu[0] * hn[0] + nu[1] * hn[1], tau[0] * hn[0] + tau[1] * hn[1])
    }

    /// Evaluates `P` on the collar with the given `M`.
    pub fn barrier_p(&self, state: &FlowState, m: f64) -> Result<BarrierField> {
        let params = self
            .config
            .barrier
            .ok_or_else(|| Error::Config("barrier constants are not set".into()))?;
        let collar = self.collar.as_ref().expect("collar exists when barrier is set");
        let forcing = &self.config.forcing;
        let qq = params.a_bar + 0.5 * m;
        let mut p = Vec::with_capacity(collar.nodes.len());
        let mut q = Vec::with_capacity(collar.nodes.len());
        let mut dqn = Vec::with_capacity(collar.nodes.len());
        let (mut min, mut argmin, mut bmax) = (f64::INFINITY, 0, 0.0_f64);
        for (c, &i) in collar.nodes.iter().enumerate() {
            let d = collar.d[c];
            let s = -1.0 + 2.0 * params.n * d;
            let dq = [s * collar.grad[c][0], s * collar.grad[c][1]];
            let qv = -d + params.n * d * d;
            let du = state.evals[i].derivs.du;
            let x = self.grid.position(i);
            let pv = du[0] * dq[0] + du[1] * dq[1] - forcing.flux(&x, state.u.value(i)) - qq * qv;
            if pv < min {
                min = pv;
                argmin = i;
            }
            if self.grid.kind(i) == NodeKind::Boundary {
                bmax = bmax.max(pv.abs());
            }
            p.push(pv);
            q.push(qv);
            dqn.push(dq[0].hypot(dq[1]));
        }
        Ok(BarrierField {
            nodes: collar.nodes.clone(),
            p,
            q,
            dq_norm: dqn,
            min,
            argmin,
            boundary_max_abs: bmax,
            m,
        })
    }

    /// Computes the monitor record and updates the running boundary maximum.
    pub fn monitors(&mut self, state: &FlowState, dt: f64) -> Result<MonitorRecord> {
        let g = &self.grid;
        let b0 = g.index(g.n_rho() - 1, 0);
        let ev = &state.evals;
        let fold = |it: &mut dyn Iterator<Item = f64>, init: f64, f: fn(f64, f64) -> f64| it.fold(init, f);
        let max_abs_speed = fold(&mut ev.iter().map(|e| e.speed.abs()), 0.0, f64::max);
        let max_speed = fold(&mut ev.iter().map(|e| e.speed), f64::NEG_INFINITY, f64::max);
        let min_speed = fold(&mut ev.iter().map(|e| e.speed), f64::INFINITY, f64::min);
        let min_kappa = fold(&mut ev.iter().map(|e| e.kappa[0]), f64::INFINITY, f64::min);
        let max_kappa = fold(&mut ev.iter().map(|e| e.kappa[1]), f64::NEG_INFINITY, f64::max);
        let min_nu_vert = fold(&mut ev.iter().map(|e| e.nu_vert()), f64::INFINITY, f64::min);
        let max_grad_interior = fold(&mut ev[..b0].iter().map(|e| e.grad_norm()), 0.0, f64::max);
        let max_grad_boundary = fold(&mut ev[b0..].iter().map(|e| e.grad_norm()), 0.0, f64::max);
        let (mut max_nn, mut max_tn) = (f64::NEG_INFINITY, 0.0_f64);
        for k in 0..g.n_theta() {
            let (nn, tn) = self.boundary_second_derivatives(state, k);
            max_nn = max_nn.max(nn);
            max_tn = max_tn.max(tn.abs());
        }
        let a = self.a_ratio;
        let interior_ratio = fold(
            &mut ev[..b0].iter().map(|e| e.kappa[1] / (e.nu_vert() - a)),
            0.0,
            f64::max,
        );
        self.m_running = self.m_running.max(max_nn);
        let barrier_min = match self.config.barrier {
            Some(_) => Some(self.barrier_p(state, self.m_running)?.min),
            None => None,
        };
        Ok(MonitorRecord {
            t: state.t(),
            dt,
            max_abs_speed,
            max_speed,
            min_speed,
            min_kappa,
            max_kappa,
            min_nu_vert,
            residual: state.residual(),
            max_grad_interior,
            max_grad_boundary,
            max_u_nunu: max_nn,
            max_abs_u_taunu: max_tn,
            interior_ratio,
            barrier_min,
        })
    }

    /// Fixes the run constants that are defined at `t = 0`.
    pub fn start(&mut self, state0: &FlowState) {
        let ev = &state0.evals;
        self.a_ratio = 0.5 * ev.iter().map(|e| e.nu_vert()).fold(f64::INFINITY, f64::min);
        self.speed0 = (
            ev.iter().map(|e| e.speed).fold(f64::INFINITY, f64::min),
            ev.iter().map(|e| e.speed).fold(f64::NEG_INFINITY, f64::max),
        );
        self.m_running = f64::NEG_INFINITY;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    Timeout,
}

/// Pass/fail of the runtime invariants with their worst observed values.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSummary {
    /// Worst excursion of the speed outside `[min(min u0', 0), max(max u0', 0)]`.
    pub speed_excess: f64,
    pub speed_bounds: bool,
    /// Smallest nodewise increment `u(t_{k+1}) - u(t_k)` over the run.
    pub min_increment: f64,
    /// Monotonicity is asserted only when the initial margin is nonnegative.
    pub monotone_expected: bool,
    pub monotone: bool,
    pub min_kappa: f64,
    pub convex: bool,
    /// Worst `max_interior |Du| - max_boundary |Du|`.
    pub gradient_excess: f64,
    pub gradient_on_boundary: bool,
    pub barrier_min: Option<f64>,
    pub barrier_boundary_max: Option<f64>,
    pub barrier_q_bounds: Option<bool>,
    pub barrier_nonnegative: Option<bool>,
    /// Each running max of `max|u|, max|Du|, max kappa, max u_nunu` moved by
    /// less than 1% over the final 20% of samples.
    pub bounds_stabilized: bool,
    /// `sup |u(T) - u(0) - sum dt_k R_k|`, for the explicit scheme.
    pub increment_identity_error: Option<f64>,
    pub total_halvings: usize,
    pub control_exhausted_steps: usize,
}

impl InvariantSummary {
    pub fn lines(&self) -> Vec<(String, bool, String)> {
        let mut out = vec![
            (
                "speed max principle".to_string(),
                self.speed_bounds,
                format!("worst excess {:.3e}", self.speed_excess),
            ),
            (
                "monotone increase".to_string(),
                !self.monotone_expected || self.monotone,
                format!(
                    "min increment {:.3e}{}",
                    self.min_increment,
                    if self.monotone_expected { "" } else { " (not asserted: negative initial margin)" }
                ),
            ),
            ("strict convexity".to_string(), self.convex, format!("min kappa {:.6e}", self.min_kappa)),
            (
                "gradient maximum on boundary".to_string(),
                self.gradient_on_boundary,
                format!("worst interior excess {:.3e}", self.gradient_excess),
            ),
            (
                "uniform bounds stabilize".to_string(),
                self.bounds_stabilized,
                "running maxima over the final 20% of samples".to_string(),
            ),
        ];
        if let (Some(nonneg), Some(min), Some(bmax), Some(q)) = (
            self.barrier_nonnegative,
            self.barrier_min,
            self.barrier_boundary_max,
            self.barrier_q_bounds,
        ) {
            out.push((
                "barrier P >= 0 on collar".to_string(),
                nonneg,
                format!("min P {min:.3e}"),
            ));
            out.push((
                "barrier P = 0 on boundary".to_string(),
                bmax <= 1e-8,
                format!("max |P| {bmax:.3e}"),
            ));
            out.push(("barrier q bounds".to_string(), q, String::new()));
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Step indices (0 = initial) whose fields are kept.
    pub capture_steps: Vec<usize>,
    /// Replay these step sizes instead of the adaptive schedule.
    pub dt_schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub status: RunStatus,
    pub initial: InitialReport,
    pub initial_field: ScalarField,
    pub final_state: FlowState,
    pub records: Vec<MonitorRecord>,
    /// Accepted step sizes in order.
    pub dts: Vec<f64>,
    pub captures: Vec<(usize, ScalarField)>,
    pub summary: InvariantSummary,
    pub engine: FlowEngine,
}

fn running_max_stable(series: &[f64]) -> bool {
    if series.len() < 5 {
        return true;
    }
    let cut = series.len() - series.len() / 5 - 1;
    let before = series[..=cut].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let after = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (after - before).abs() <= 0.01 * before.abs().max(1e-300)
}

/// Integrates until `sup |F - Phi| < tol_res` holds on two consecutive
/// samples, or until `t_max` / `max_steps`.
pub fn run_flow(config: &FlowConfig) -> Result<FlowRun> {
    run_flow_with(config, &RunOptions::default())
}

pub fn run_flow_with(config: &FlowConfig, opts: &RunOptions) -> Result<FlowRun> {
    let mut engine = FlowEngine::new(config.clone())?;
    let u0 = engine.initial_field();
    let initial = engine.check_initial(&u0)?;
    engine.admit_initial(&u0, &initial)?;
    let mut state = engine.state_from(u0.clone(), 0)?;
    engine.start(&state);
    let g_n = engine.grid().n_owned();

    let (s_lo, s_hi) = engine.speed0;
    let eps = 1e-8 * (1.0 + s_lo.abs().max(s_hi.abs()));
    let monotone_expected = initial.supersolution_margin.is_some_and(|m| m >= 0.0);
    let mut summary = InvariantSummary {
        speed_excess: f64::NEG_INFINITY,
        speed_bounds: true,
        min_increment: f64::INFINITY,
        monotone_expected,
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
    let mut sum_increments = vec![0.0; g_n];
    let mut records = Vec::new();
    let mut dts = Vec::new();
    let mut captures = Vec::new();
    let mut series: [Vec<f64>; 4] = Default::default();
    let stol = stencil_tolerance(engine.grid());

    let mut observe = |engine: &mut FlowEngine,
                       state: &FlowState,
                       dt: f64,
                       records: &mut Vec<MonitorRecord>,
                       summary: &mut InvariantSummary|
     -> Result<()> {
        let rec = engine.monitors(state, dt)?;
        let lo = s_lo.min(0.0);
        let hi = s_hi.max(0.0);
        let excess = (lo - rec.min_speed).max(rec.max_speed - hi);
        summary.speed_excess = summary.speed_excess.max(excess);
        summary.speed_bounds &= excess <= eps;
        summary.min_kappa = summary.min_kappa.min(rec.min_kappa);
        summary.convex &= rec.min_kappa > 0.0;
        let gx = rec.max_grad_interior - rec.max_grad_boundary;
        summary.gradient_excess = summary.gradient_excess.max(gx);
        summary.gradient_on_boundary &= gx <= 1e-10;
        if let Some(params) = engine.config().barrier {
            let bf = engine.barrier_p(state, engine.m_running)?;
            summary.barrier_min = Some(summary.barrier_min.map_or(bf.min, |m: f64| m.min(bf.min)));
            summary.barrier_boundary_max = Some(
                summary
                    .barrier_boundary_max
                    .map_or(bf.boundary_max_abs, |m: f64| m.max(bf.boundary_max_abs)),
            );
            summary.barrier_q_bounds =
                Some(summary.barrier_q_bounds.unwrap_or(true) && bf.q_bounds_hold(&params));
            summary.barrier_nonnegative =
                Some(summary.barrier_nonnegative.unwrap_or(true) && bf.min >= -stol);
        }
        let umax = (0..g_n).map(|i| state.u.value(i).abs()).fold(0.0, f64::max);
        series[0].push(umax);
        series[1].push(rec.max_grad_boundary.max(rec.max_grad_interior));
        series[2].push(rec.max_kappa);
        series[3].push(rec.max_u_nunu);
        records.push(rec);
        Ok(())
    };

    observe(&mut engine, &state, 0.0, &mut records, &mut summary)?;
    if opts.capture_steps.contains(&0) {
        captures.push((0, state.u.clone()));
    }
    let mut below = usize::from(records[0].residual < config.tol_res);
    let mut dt_next = config.dt_initial;
    let status = loop {
        if below >= 2 {
            break RunStatus::Converged;
        }
        if state.t() >= config.t_max || state.step >= config.max_steps {
            break RunStatus::Timeout;
        }
        if let Some(s) = &opts.dt_schedule {
            if state.step >= s.len() {
                break RunStatus::Timeout;
            }
        }
        let mut dt = match (&opts.dt_schedule, config.scheme) {
            (Some(s), _) => s[state.step],
            (None, Scheme::ExplicitEuler) => engine.stable_dt(&state),
            (None, Scheme::LinearlyImplicit) => dt_next,
        };
        if opts.dt_schedule.is_none() {
            dt = dt.min(config.t_max - state.t()).max(1e-300);
        }
        let r_old: Vec<f64> = state.speeds();
        let out = engine.step(&state, dt)?;
        summary.total_halvings += out.halvings;
        summary.control_exhausted_steps += usize::from(out.control_exhausted);
        if opts.dt_schedule.is_some() && out.halvings > 0 {
            return Err(Error::Usage(format!(
                "replayed step {} needed {} halvings",
                state.step, out.halvings
            )));
        }
        let next = out.state;
        let mut min_inc = f64::INFINITY;
        for i in 0..g_n {
            let inc = next.u.value(i) - state.u.value(i);
            min_inc = min_inc.min(inc);
            if config.scheme == Scheme::ExplicitEuler {
                sum_increments[i] += out.dt * r_old[i];
            }
        }
        summary.min_increment = summary.min_increment.min(min_inc);
        summary.monotone &= min_inc >= -1e-10;
        dts.push(out.dt);
        dt_next = if out.halvings > 0 {
            out.dt
        } else {
            (out.dt * config.dt_growth).min(config.dt_max)
        };
        state = next;
        if opts.capture_steps.contains(&state.step) {
            captures.push((state.step, state.u.clone()));
        }
        if state.step % config.monitor_every == 0 {
            observe(&mut engine, &state, out.dt, &mut records, &mut summary)?;
            if records.last().is_some_and(|r| r.residual < config.tol_res) {
                below += 1;
            } else {
                below = 0;
            }
        }
    };
    if records.last().is_none_or(|r| r.t != state.t()) {
        observe(&mut engine, &state, dts.last().copied().unwrap_or(0.0), &mut records, &mut summary)?;
    }
    summary.bounds_stabilized = series.iter().all(|s| running_max_stable(s));
    if config.scheme == Scheme::ExplicitEuler {
        let err = (0..g_n)
            .map(|i| (state.u.value(i) - u0.value(i) - sum_increments[i]).abs())
            .fold(0.0, f64::max);
        summary.increment_identity_error = Some(err);
    }
    Ok(FlowRun {
        status,
        initial,
        initial_field: u0,
        final_state: state,
        records,
        dts,
        captures,
        summary,
        engine,
    })
}

#[derive(Debug, Clone)]
pub struct StationaryResult {
    pub field: ScalarField,
    pub residual: f64,
    pub steps: usize,
    pub status: RunStatus,
}

/// Solves `F(A[u]) = Phi(x, u)`, `u_nu = phi(x, u)` by pseudo-time iteration
/// to `0.01 tol_res`, starting from the configured initial data.
pub fn solve_stationary(config: &FlowConfig) -> Result<StationaryResult> {
    let cfg = FlowConfig {
        scheme: Scheme::LinearlyImplicit,
        tol_res: 0.01 * config.tol_res,
        t_max: f64::MAX,
        dt_growth: config.dt_growth.max(2.0),
        dt_max: config.dt_max.max(1e8),
        barrier: None,
        ..config.clone()
    };
    let run = run_flow(&cfg)?;
    Ok(StationaryResult {
        residual: run.final_state.residual(),
        steps: run.final_state.step,
        field: run.final_state.u,
        status: run.status,
    })
}

/// Relative residuals of the evolution identities for the metric and for
/// the vertical normal component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub metric_error: f64,
    pub metric_scale: f64,
    pub normal_error: f64,
    pub normal_scale: f64,
    pub nodes: usize,
}

impl IdentityReport {
    pub fn metric_relative(&self) -> f64 {
        if self.metric_scale > 1e-14 {
            self.metric_error / self.metric_scale
        } else {
            self.metric_error
        }
    }

    pub fn normal_relative(&self) -> f64 {
        if self.normal_scale > 1e-14 {
            self.normal_error / self.normal_scale
        } else {
            self.normal_error
        }
    }
}

/// Checks `d/dt g_ij = -2 (F - Phi) h_ij` and
/// `d/dt nu^{n+1} = -g^ij (F - Phi)_i u_j` on three consecutive states.
///
/// Both identities hold along normal trajectories. The fixed-`x` time
/// difference is converted by adding the transport terms of the horizontal
/// velocity `v = -(F - Phi) Du / w`.
pub fn verify_evolution_identities(
    grid: &Grid,
    f: &CurvatureFunction,
    forcing: &ForcingSpec,
    window: &[ScalarField],
) -> Result<IdentityReport> {
    if window.len() < 3 {
        return Err(Error::Usage(format!(
            "evolution identities need three states, got {}",
            window.len()
        )));
    }
    let (s0, s1, s2) = (&window[window.len() - 3], &window[window.len() - 2], &window[window.len() - 1]);
    let (h1, h2) = (s1.t - s0.t, s2.t - s1.t);
    if !(h1 > 0.0 && h2 > 0.0) {
        return Err(Error::Usage("window times must increase".into()));
    }
    let (c0, c1, c2) = (
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    );
    let d0 = grid.differentiate(&s0.values);
    let d2 = grid.differentiate(&s2.values);
    let mid = evaluate(grid, f, forcing, s1)?;
    let n_ext = grid.n_ext();
    let mut sfield = vec![0.0; n_ext];
    let mut vx = vec![0.0; n_ext];
    let mut vy = vec![0.0; n_ext];
    for (i, e) in mid.iter().enumerate() {
        let s = e.f_value - e.force;
        sfield[i] = s;
        vx[i] = -s * e.derivs.du[0] / e.w;
        vy[i] = -s * e.derivs.du[1] / e.w;
    }
    let ds = grid.differentiate(&sfield);
    let dvx = grid.differentiate(&vx);
    let dvy = grid.differentiate(&vy);
    let last = grid.index(grid.n_rho() - 2, grid.n_theta() - 1);
    let (mut me, mut ms, mut ne, mut ns) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..=last {
        let e = &mid[i];
        let u = e.derivs.du;
        let hs = e.derivs.d2u;
        let w = e.w;
        let s = sfield[i];
        let v = [vx[i], vy[i]];
        let dv = [dvx[i].du, dvy[i].du]; // dv[k][l] = d_l v^k
        let g = |a: usize, b: usize| f64::from(u8::from(a == b)) + u[a] * u[b];
        let dg = |k: usize, a: usize, b: usize| hs[a][k] * u[b] + u[a] * hs[b][k];
        let ut = |a: usize| c0 * d0[i].du[a] + c1 * u[a] + c2 * d2[i].du[a];
        for a in 0..2 {
            for b in a..2 {
                let dt_g = ut(a) * u[b] + u[a] * ut(b);
                let mut lie = 0.0;
                for k in 0..2 {
                    lie += v[k] * dg(k, a, b) + g(k, b) * dv[k][a] + g(a, k) * dv[k][b];
                }
                let rhs = -2.0 * s * hs[a][b] / w;
                me = me.max((dt_g + lie - rhs).abs());
                ms = ms.max(rhs.abs());
            }
        }
        let inv_w = |d: &[f64; 2]| 1.0 / (1.0 + d[0] * d[0] + d[1] * d[1]).sqrt();
        let dt_nu = c0 * inv_w(&d0[i].du) + c1 / w + c2 * inv_w(&d2[i].du);
        let w3 = w * w * w;
        let grad_nu = [
            -(u[0] * hs[0][0] + u[1] * hs[1][0]) / w3,
            -(u[0] * hs[0][1] + u[1] * hs[1][1]) / w3,
        ];
        let lhs = dt_nu + v[0] * grad_nu[0] + v[1] * grad_nu[1];
        let rhs = -(ds[i].du[0] * u[0] + ds[i].du[1] * u[1]) / (w * w);
        ne = ne.max((lhs - rhs).abs());
        ns = ns.max(rhs.abs());
    }
    Ok(IdentityReport {
        metric_error: me,
        metric_scale: ms,
        normal_error: ne,
        normal_scale: ns,
        nodes: last + 1,
    })
}
