//! The discrete flow operator `R(u) = w (F(A[u]) - Phi(x, u))` on a grid and
//! its analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{BreakdownNode, Error, Result};
use crate::forcing::ForcingSpec;
use crate::geometry::{curvature_matrix, principal_curvatures, GraphPointData};
use crate::grid::{Derivs, Grid, ScalarField};
use crate::symfunc::CurvatureFunction;

/// Geometric state of the graph at one owned node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEval {
    pub derivs: Derivs,
    pub w: f64,
    /// Ascending principal curvatures.
    pub kappa: [f64; 2],
    pub f_value: f64,
    /// `Phi(x, u)`
    pub force: f64,
    /// `w (F - Phi)`
    pub speed: f64,
    /// `G^{ij}`
    pub g_upper: [[f64; 2]; 2],
    /// `G^s`
    pub g_grad: [f64; 2],
}

impl NodeEval {
    pub fn nu_vert(&self) -> f64 {
        1.0 / self.w
    }

    pub fn grad_norm(&self) -> f64 {
        self.derivs.du[0].hypot(self.derivs.du[1])
    }
}

fn eval_node(
    grid: &Grid,
    f: &CurvatureFunction,
    forcing: &ForcingSpec,
    field: &ScalarField,
    idx: usize,
) -> std::result::Result<NodeEval, Vec<f64>> {
    let d = grid.stencil(idx).apply(&field.values);
    let du = DVector::from_column_slice(&d.du);
    let d2u = DMatrix::from_row_slice(2, 2, &[d.d2u[0][0], d.d2u[0][1], d.d2u[1][0], d.d2u[1][1]]);
    let spectrum = || {
        principal_curvatures(&curvature_matrix(&du, &d2u))
            .values
            .as_slice()
            .to_vec()
    };
    if !d2u.iter().all(|v| v.is_finite()) || !du.iter().all(|v| v.is_finite()) {
        return Err(vec![f64::NAN; 2]);
    }
    let p = match GraphPointData::new(du.clone(), d2u.clone(), f) {
        Ok(p) => p,
        Err(_) => return Err(spectrum()),
    };
    let x = grid.position(idx);
    let u = field.value(idx);
    let force = forcing.force(&x, u);
    let gu = p.g_upper();
    let gs = p.g_gradient();
    Ok(NodeEval {
        derivs: d,
        w: p.w,
        kappa: [p.kappa[0], p.kappa[1]],
        f_value: p.f_value,
        force,
        speed: p.w * (p.f_value - force),
        g_upper: [[gu[(0, 0)], gu[(0, 1)]], [gu[(1, 0)], gu[(1, 1)]]],
        g_grad: [gs[0], gs[1]],
    })
}

/// Evaluates every owned node. A node whose curvature spectrum leaves the
/// positive cone yields a flow breakdown naming the first such node.
pub fn evaluate(
    grid: &Grid,
    f: &CurvatureFunction,
    forcing: &ForcingSpec,
    field: &ScalarField,
) -> Result<Vec<NodeEval>> {
    if f.dim() != 2 {
        return Err(Error::Usage(format!(
            "the grid solver is planar; curvature function has n={}",
            f.dim()
        )));
    }
    let raw: Vec<_> = (0..grid.n_owned())
        .into_par_iter()
        .map(|i| eval_node(grid, f, forcing, field, i))
        .collect();
    let mut out = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        match r {
            Ok(e) => out.push(e),
            Err(spectrum) => return Err(breakdown(grid, i, spectrum, field.t, 0)),
        }
    }
    Ok(out)
}

pub(crate) fn breakdown(grid: &Grid, node: usize, spectrum: Vec<f64>, t: f64, halvings: usize) -> Error {
    let (ring, angle_index) = grid.ring_angle(node);
    Error::FlowBreakdown {
        node: Box::new(BreakdownNode {
            node,
            ring,
            angle_index,
            position: grid.position(node).to_vec(),
            spectrum,
            t,
        }),
        halvings,
    }
}

/// Sparse rows of an operator on owned nodes: `(column, value)` pairs.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

/// Derivatives of each ghost value with respect to owned values, from the
/// Neumann closure `g = u_in + (2h/alpha)(phi(x, u_b) - beta u_theta)`.
pub fn ghost_dependencies(grid: &Grid, forcing: &ForcingSpec, field: &ScalarField) -> SparseRows {
    let b = grid.n_rho() - 1;
    let nt = grid.n_theta();
    let [c1, c2] = grid.theta_weights();
    (0..nt)
        .map(|k| {
            let rule = grid.ghost_rule(k);
            let ib = grid.index(b, k);
            let x = grid.position(ib);
            let s = 2.0 * grid.h_rho() / rule.alpha;
            let at = |m: isize| grid.index(b, (k as isize + m).rem_euclid(nt as isize) as usize);
            vec![
                (grid.index(b - 1, k), 1.0),
                (ib, s * forcing.flux_z(&x, field.value(ib))),
                (at(1), -s * rule.beta * c1),
                (at(-1), s * rule.beta * c1),
                (at(2), -s * rule.beta * c2),
                (at(-2), s * rule.beta * c2),
            ]
        })
        .collect()
}

/// Jacobian `dR/du` over owned nodes, ghost dependencies folded in.
pub fn jacobian(
    grid: &Grid,
    forcing: &ForcingSpec,
    evals: &[NodeEval],
    field: &ScalarField,
) -> SparseRows {
    let ghosts = ghost_dependencies(grid, forcing, field);
    let n_owned = grid.n_owned();
    (0..n_owned)
        .into_par_iter()
        .map(|i| {
            let e = &evals[i];
            let s = e.f_value - e.force;
            let du = e.derivs.du;
            let dr_ds = [
                du[0] / e.w * s + e.w * e.g_grad[0],
                du[1] / e.w * s + e.w * e.g_grad[1],
            ];
            let g = e.g_upper;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(24);
            let mut add = |col: usize, v: f64| match row.iter_mut().find(|(c, _)| *c == col) {
                Some(slot) => slot.1 += v,
                None => row.push((col, v)),
            };
            for (col, wt) in &grid.stencil(i).entries {
                let c = dr_ds[0] * wt[0]
                    + dr_ds[1] * wt[1]
                    + e.w * (g[0][0] * wt[2] + 2.0 * g[0][1] * wt[3] + g[1][1] * wt[4]);
                if *col < n_owned {
                    add(*col, c);
                } else {
                    for (dep, dv) in &ghosts[*col - n_owned] {
                        add(*dep, c * dv);
                    }
                }
            }
            let x = grid.position(i);
            add(i, -e.w * forcing.force_z(&x, field.value(i)));
            row
        })
        .collect()
}

/// Solves `(I - dt J) delta = dt R` by sparse LU.
pub fn implicit_increment(jac: &SparseRows, residual: &[f64], dt: f64) -> Result<Vec<f64>> {
    use faer::linalg::solvers::Solve;
    use faer::sparse::{SparseColMat, Triplet};

    let n = residual.len();
    let mut triplets = Vec::with_capacity(jac.iter().map(|r| r.len() + 1).sum());
    for (i, row) in jac.iter().enumerate() {
        let mut diag = 1.0;
        for &(j, v) in row {
            if j == i {
                diag -= dt * v;
            } else {
                triplets.push(Triplet::new(i, j, -dt * v));
            }
        }
        triplets.push(Triplet::new(i, i, diag));
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let lu = mat.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
    let mut rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| dt * residual[i]);
    lu.solve_in_place(rhs.as_mut());
    let out: Vec<f64> = (0..n).map(|i| rhs[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("non-finite increment".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::forcing::{FluxTerm, ForceTerm};

    fn setup() -> (Grid, CurvatureFunction, ForcingSpec, ScalarField) {
        let grid = Grid::new(Domain::ellipse(1.3, 1.0).unwrap(), 8, 12).unwrap();
        let f = CurvatureFunction::combined(2, 1).unwrap();
        let forcing = ForcingSpec::new(
            ForceTerm::Affine { base: 0.4, slope: 0.2 },
            FluxTerm::Paraboloid { curvature: 1.0, height: 0.0, slope: 1.5, semi_axes: (1.3, 1.0) },
        );
        let mut u = grid.field_from_fn(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.02 * x[0] * x[1] + 0.01 * x[1], 0.0);
        grid.apply_neumann(&mut u, &forcing);
        (grid, f, forcing, u)
    }

    fn residual(grid: &Grid, f: &CurvatureFunction, forcing: &ForcingSpec, owned: &[f64]) -> Vec<f64> {
        let mut values = owned.to_vec();
        values.resize(grid.n_ext(), 0.0);
        let mut field = ScalarField::from_absolute(values, 0.0);
        grid.apply_neumann(&mut field, forcing);
        evaluate(grid, f, forcing, &field).unwrap().iter().map(|e| e.speed).collect()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (grid, f, forcing, u) = setup();
        let evals = evaluate(&grid, &f, &forcing, &u).unwrap();
        let jac = jacobian(&grid, &forcing, &evals, &u);
        let owned = &u.absolute()[..grid.n_owned()];
        let h = 1e-6;
        let mut worst = 0.0_f64;
        for col in (0..grid.n_owned()).step_by(7).chain(grid.boundary_nodes()) {
            let mut p = owned.to_vec();
            let mut m = owned.to_vec();
            p[col] += h;
            m[col] -= h;
            let rp = residual(&grid, &f, &forcing, &p);
            let rm = residual(&grid, &f, &forcing, &m);
            for (row, entries) in jac.iter().enumerate() {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let an = entries.iter().filter(|(c, _)| *c == col).map(|(_, v)| v).sum::<f64>();
                worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
            }
        }
        assert!(worst < 1e-5, "worst relative mismatch {worst}");
    }

    #[test]
    fn breakdown_names_the_node() {
        let (grid, f, forcing, _) = setup();
        let mut u = grid.field_from_fn(|x| x[0] * x[0] - 0.3 * x[1] * x[1], 0.0);
        grid.apply_neumann(&mut u, &forcing);
        match evaluate(&grid, &f, &forcing, &u) {
            Err(Error::FlowBreakdown { node, .. }) => {
                assert_eq!(node.node, 0);
                assert!(node.spectrum[0] < 0.0);
            }
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn implicit_increment_solves_the_system() {
        let (grid, f, forcing, u) = setup();
        let evals = evaluate(&grid, &f, &forcing, &u).unwrap();
        let jac = jacobian(&grid, &forcing, &evals, &u);
        let r: Vec<f64> = evals.iter().map(|e| e.speed).collect();
        let dt = 0.3;
        let d = implicit_increment(&jac, &r, dt).unwrap();
        for (i, row) in jac.iter().enumerate() {
            let jd: f64 = row.iter().map(|(c, v)| v * d[*c]).sum();
            assert!((d[i] - dt * jd - dt * r[i]).abs() < 1e-10);
        }
    }
}
