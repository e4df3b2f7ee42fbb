//! Boundary-fitted polar grid `x = rho (a cos theta, b sin theta)` with one
//! ghost ring outside the boundary, finite-difference derivative stencils and
//! the Neumann ghost closure.
//!
//! Radial nodes sit at `rho_j = (j + 1/2) h` for `j = 0..n_rho`, with
//! `h = 1/(n_rho - 1/2)` so that the last owned ring lies on the boundary.
//! Ring `n_rho` is the ghost ring. The ring at `rho = -h/2` needed by the
//! innermost stencils is the innermost ring itself, shifted by half a turn.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{Domain, DomainSpec};
use crate::error::{Error, Result};
use crate::forcing::ForcingSpec;

/// Weight slots of a stencil entry: `u_x, u_y, u_xx, u_xy, u_yy`.
pub type Weights = [f64; 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Ghost,
}

/// Cartesian first and second derivatives at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub du: [f64; 2],
    pub d2u: [[f64; 2]; 2],
}

/// Linear stencil of one owned node over extended-field indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStencil {
    pub entries: Vec<(usize, Weights)>,
}

impl NodeStencil {
    pub fn apply(&self, values: &[f64]) -> Derivs {
        let mut s = [0.0; 5];
        for (idx, w) in &self.entries {
            let v = values[*idx];
            for c in 0..5 {
                s[c] += w[c] * v;
            }
        }
        Derivs {
            du: [s[0], s[1]],
            d2u: [[s[2], s[3]], [s[3], s[4]]],
        }
    }
}

/// Ghost closure at one boundary node: `nu . Du = alpha u_rho + beta u_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostRule {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct Grid {
    domain: Domain,
    n_rho: usize,
    n_theta: usize,
    h_rho: f64,
    h_theta: f64,
    positions: Vec<[f64; 2]>,
    normals: Vec<[f64; 2]>,
    stencils: Vec<NodeStencil>,
    ghost_rules: Vec<GhostRule>,
    d_theta: [f64; 2],
    d_theta2: [f64; 3],
    jacobians: Vec<[[f64; 2]; 2]>,
}

/// Grid values at all owned nodes plus the ghost ring, with a time stamp.
///
/// The field is `offset + values[i]`. Stencils act on `values` only, so a
/// large constant part does not feed rounding noise into the derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub t: f64,
    pub offset: f64,
}

impl ScalarField {
    pub fn new(values: Vec<f64>, t: f64) -> Self {
        Self {
            values,
            t,
            offset: 0.0,
        }
    }

    /// Stores `absolute - absolute[0]` with offset `absolute[0]`.
    pub fn from_absolute(absolute: Vec<f64>, t: f64) -> Self {
        let offset = absolute.first().copied().unwrap_or(0.0);
        Self {
            values: absolute.iter().map(|v| v - offset).collect(),
            t,
            offset,
        }
    }

    /// Field value at node `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.offset + self.values[i]
    }

    /// Field values at all nodes.
    pub fn absolute(&self) -> Vec<f64> {
        self.values.iter().map(|v| self.offset + v).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weights `(c1, c2)` of the 5-point first derivative in theta, exact on
/// Fourier modes up to 2.
fn theta_first_weights(dt: f64) -> [f64; 2] {
    let (s1, s2, s4) = (dt.sin(), (2.0 * dt).sin(), (4.0 * dt).sin());
    let det = s1 * s4 - s2 * s2;
    [(0.5 * s4 - s2) / det, (s1 - 0.5 * s2) / det]
}

/// Weights `(e0, e1, e2)` of the 5-point second derivative in theta, exact on
/// Fourier modes up to 2.
fn theta_second_weights(dt: f64) -> [f64; 3] {
    let (c1, c2, c4) = (dt.cos(), (2.0 * dt).cos(), (4.0 * dt).cos());
    // 2 e1 (c1 - 1) + 2 e2 (c2 - 1) = -1 ; 2 e1 (c2 - 1) + 2 e2 (c4 - 1) = -4
    let (a11, a12, a21, a22) = (2.0 * (c1 - 1.0), 2.0 * (c2 - 1.0), 2.0 * (c2 - 1.0), 2.0 * (c4 - 1.0));
    let det = a11 * a22 - a12 * a21;
    let e1 = (-a22 + 4.0 * a12) / det;
    let e2 = (-4.0 * a11 + a21) / det;
    [-2.0 * e1 - 2.0 * e2, e1, e2]
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

struct Acc(Vec<(usize, Weights)>);

impl Acc {
    fn add(&mut self, idx: usize, coef: f64, out: &Weights) {
        if coef == 0.0 {
            return;
        }
        let slot = match self.0.iter().position(|(i, _)| *i == idx) {
            Some(p) => p,
            None => {
                self.0.push((idx, [0.0; 5]));
                self.0.len() - 1
            }
        };
        for c in 0..5 {
            self.0[slot].1[c] += coef * out[c];
        }
    }
}

impl Grid {
    pub fn new(domain: Domain, n_rho: usize, n_theta: usize) -> Result<Self> {
        if n_rho < 3 {
            return Err(Error::Config(format!("n_rho must be at least 3 (got {n_rho})")));
        }
        if n_theta < 8 || n_theta % 2 != 0 {
            return Err(Error::Config(format!(
                "n_theta must be even and at least 8 (got {n_theta})"
            )));
        }
        let h_rho = 1.0 / (n_rho as f64 - 0.5);
        let h_theta = TAU / n_theta as f64;
        let (a, b) = domain.semi_axes();
        let mut positions = Vec::with_capacity((n_rho + 1) * n_theta);
        for j in 0..=n_rho {
            let rho = (j as f64 + 0.5) * h_rho;
            for k in 0..n_theta {
                let th = k as f64 * h_theta;
                positions.push([a * rho * th.cos(), b * rho * th.sin()]);
            }
        }
        let normals = (0..n_theta)
            .map(|k| domain.boundary_normal(k as f64 * h_theta))
            .collect();
        let mut grid = Grid {
            domain,
            n_rho,
            n_theta,
            h_rho,
            h_theta,
            positions,
            normals,
            stencils: Vec::new(),
            ghost_rules: Vec::new(),
            d_theta: theta_first_weights(h_theta),
            d_theta2: theta_second_weights(h_theta),
            jacobians: Vec::new(),
        };
        grid.jacobians = (0..grid.n_owned()).map(|i| grid.jacobian_at(i)).collect();
        grid.stencils = (0..grid.n_owned()).map(|i| grid.build_stencil(i)).collect();
        grid.ghost_rules = (0..n_theta)
            .map(|k| {
                let jm = grid.jacobians[grid.index(n_rho - 1, k)];
                let kinv = inv2(jm);
                let nu = grid.normals[k];
                GhostRule {
                    alpha: kinv[0][0] * nu[0] + kinv[0][1] * nu[1],
                    beta: kinv[1][0] * nu[0] + kinv[1][1] * nu[1],
                }
            })
            .collect();
        Ok(grid)
    }

    pub fn from_spec(spec: DomainSpec, n_rho: usize, n_theta: usize) -> Result<Self> {
        Grid::new(crate::domain::build_domain(spec)?, n_rho, n_theta)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn h_rho(&self) -> f64 {
        self.h_rho
    }

    pub fn h_theta(&self) -> f64 {
        self.h_theta
    }

    /// Number of owned (interior and boundary) nodes.
    pub fn n_owned(&self) -> usize {
        self.n_rho * self.n_theta
    }

    /// Number of nodes including the ghost ring.
    pub fn n_ext(&self) -> usize {
        (self.n_rho + 1) * self.n_theta
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.n_theta + k
    }

    /// `(ring, angle index)` of a node.
    pub fn ring_angle(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_theta, idx % self.n_theta)
    }

    pub fn rho(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h_rho
    }

    pub fn theta(&self, k: usize) -> f64 {
        k as f64 * self.h_theta
    }

    pub fn position(&self, idx: usize) -> [f64; 2] {
        self.positions[idx]
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        let j = idx / self.n_theta;
        if j == self.n_rho {
            NodeKind::Ghost
        } else if j + 1 == self.n_rho {
            NodeKind::Boundary
        } else {
            NodeKind::Interior
        }
    }

    pub fn boundary_nodes(&self) -> std::ops::Range<usize> {
        self.index(self.n_rho - 1, 0)..self.n_owned()
    }

    /// Outward unit normal at the boundary node with angle index `k`.
    pub fn normal(&self, k: usize) -> [f64; 2] {
        self.normals[k]
    }

    pub fn stencil(&self, idx: usize) -> &NodeStencil {
        &self.stencils[idx]
    }

    pub fn ghost_rule(&self, k: usize) -> &GhostRule {
        &self.ghost_rules[k]
    }

    /// First-derivative theta weights `(c1, c2)`.
    pub fn theta_weights(&self) -> [f64; 2] {
        self.d_theta
    }

    /// Smallest physical spacing between a node and its stencil neighbours.
    pub fn local_spacing(&self, idx: usize) -> f64 {
        let m = self.jacobians[idx];
        let hr = m[0][0].hypot(m[1][0]) * self.h_rho;
        let ht = m[0][1].hypot(m[1][1]) * self.h_theta;
        hr.min(ht)
    }

    /// Jacobian `[X_rho | X_theta]` of the map at an owned node.
    fn jacobian_at(&self, idx: usize) -> [[f64; 2]; 2] {
        let (j, k) = self.ring_angle(idx);
        let (a, b) = self.domain.semi_axes();
        let rho = self.rho(j);
        let (s, c) = self.theta(k).sin_cos();
        [[a * c, -a * rho * s], [b * s, b * rho * c]]
    }

    /// Extended index of ring `j` (possibly -1) at angle `k + shift`.
    fn ext(&self, j: isize, k: usize, shift: isize) -> usize {
        let n = self.n_theta as isize;
        if j < 0 {
            let kk = (k as isize + shift + n / 2).rem_euclid(n) as usize;
            self.index(0, kk)
        } else {
            let kk = (k as isize + shift).rem_euclid(n) as usize;
            self.index(j as usize, kk)
        }
    }

    fn build_stencil(&self, idx: usize) -> NodeStencil {
        let (j, k) = self.ring_angle(idx);
        let (a, b) = self.domain.semi_axes();
        let rho = self.rho(j);
        let (s, c) = self.theta(k).sin_cos();
        let kinv = inv2(self.jacobians[idx]);
        // second derivatives of the map, [component][pq] with pq = rr, rt, tt
        let xi2 = [[0.0, -a * s, -a * rho * c], [0.0, b * c, -b * rho * s]];
        let hess_out = |coef: [[f64; 2]; 2]| -> [f64; 3] {
            // K^T coef K, symmetric; returns xx, xy, yy
            let mut h = [[0.0; 2]; 2];
            for (ai, row) in h.iter_mut().enumerate() {
                for (bi, v) in row.iter_mut().enumerate() {
                    for p in 0..2 {
                        for q in 0..2 {
                            *v += kinv[p][ai] * coef[p][q] * kinv[q][bi];
                        }
                    }
                }
            }
            [h[0][0], 0.5 * (h[0][1] + h[1][0]), h[1][1]]
        };
        let first = |p: usize| -> Weights {
            // (u_x, u_y) = K^T (u_rho, u_theta)
            let (gx, gy) = (kinv[p][0], kinv[p][1]);
            let m = [
                [gx * xi2[0][0] + gy * xi2[1][0], gx * xi2[0][1] + gy * xi2[1][1]],
                [gx * xi2[0][1] + gy * xi2[1][1], gx * xi2[0][2] + gy * xi2[1][2]],
            ];
            let h = hess_out([[-m[0][0], -m[0][1]], [-m[1][0], -m[1][1]]]);
            [gx, gy, h[0], h[1], h[2]]
        };
        let second = |coef: [[f64; 2]; 2]| -> Weights {
            let h = hess_out(coef);
            [0.0, 0.0, h[0], h[1], h[2]]
        };
        let w_r = first(0);
        let w_t = first(1);
        let w_rr = second([[1.0, 0.0], [0.0, 0.0]]);
        let w_rt = second([[0.0, 1.0], [1.0, 0.0]]);
        let w_tt = second([[0.0, 0.0], [0.0, 1.0]]);

        let hr = self.h_rho;
        let [c1, c2] = self.d_theta;
        let [e0, e1, e2] = self.d_theta2;
        let ji = j as isize;
        let mut acc = Acc(Vec::with_capacity(16));
        // rho derivatives along the column
        acc.add(self.ext(ji - 1, k, 0), -0.5 / hr, &w_r);
        acc.add(self.ext(ji + 1, k, 0), 0.5 / hr, &w_r);
        acc.add(self.ext(ji - 1, k, 0), 1.0 / (hr * hr), &w_rr);
        acc.add(self.ext(ji, k, 0), -2.0 / (hr * hr), &w_rr);
        acc.add(self.ext(ji + 1, k, 0), 1.0 / (hr * hr), &w_rr);
        // theta derivatives along the ring
        let tw = [(-2, -c2), (-1, -c1), (1, c1), (2, c2)];
        for (m, wgt) in tw {
            acc.add(self.ext(ji, k, m), wgt, &w_t);
        }
        for (m, wgt) in [(-2, e2), (-1, e1), (0, e0), (1, e1), (2, e2)] {
            acc.add(self.ext(ji, k, m), wgt, &w_tt);
        }
        // mixed derivative: rho difference of theta differences
        for (m, wgt) in tw {
            acc.add(self.ext(ji + 1, k, m), wgt * 0.5 / hr, &w_rt);
            acc.add(self.ext(ji - 1, k, m), -wgt * 0.5 / hr, &w_rt);
        }
        NodeStencil { entries: acc.0 }
    }

    /// Evaluates `f` at every node, ghost ring included.
    pub fn field_from_fn(&self, f: impl Fn([f64; 2]) -> f64, t: f64) -> ScalarField {
        ScalarField::from_absolute(self.positions.iter().map(|&x| f(x)).collect(), t)
    }

    /// Cartesian derivatives at every owned node. Needs the ghost ring for
    /// the boundary nodes.
    pub fn differentiate(&self, values: &[f64]) -> Vec<Derivs> {
        assert_eq!(values.len(), self.n_ext(), "field length does not match the grid");
        self.stencils.par_iter().map(|s| s.apply(values)).collect()
    }

    /// `u_theta` along the boundary ring at angle index `k`.
    pub fn boundary_u_theta(&self, values: &[f64], k: usize) -> f64 {
        let j = self.n_rho as isize - 1;
        let [c1, c2] = self.d_theta;
        c1 * (values[self.ext(j, k, 1)] - values[self.ext(j, k, -1)])
            + c2 * (values[self.ext(j, k, 2)] - values[self.ext(j, k, -2)])
    }

    /// Ghost value that makes the boundary normal derivative equal `target`.
    pub fn ghost_value(&self, values: &[f64], k: usize, target: f64) -> f64 {
        let rule = &self.ghost_rules[k];
        let inner = values[self.index(self.n_rho - 2, k)];
        let ut = self.boundary_u_theta(values, k);
        inner + 2.0 * self.h_rho / rule.alpha * (target - rule.beta * ut)
    }

    /// Fills the ghost ring so that `u_nu = phi(x, u)` holds at every
    /// boundary node for the centered stencil.
    pub fn apply_neumann(&self, field: &mut ScalarField, forcing: &ForcingSpec) {
        let b = self.n_rho - 1;
        let ghosts: Vec<f64> = (0..self.n_theta)
            .into_par_iter()
            .map(|k| {
                let i = self.index(b, k);
                let x = self.positions[i];
                let target = forcing.flux(&x, field.value(i));
                self.ghost_value(&field.values, k, target)
            })
            .collect();
        let g0 = self.index(self.n_rho, 0);
        field.values[g0..].copy_from_slice(&ghosts);
    }

    /// Centered normal derivative `nu . Du` at boundary angle `k`.
    pub fn normal_derivative(&self, values: &[f64], k: usize) -> f64 {
        let rule = &self.ghost_rules[k];
        let ur = (values[self.index(self.n_rho, k)] - values[self.index(self.n_rho - 2, k)])
            / (2.0 * self.h_rho);
        rule.alpha * ur + rule.beta * self.boundary_u_theta(values, k)
    }

    /// One-sided second-order normal derivative at boundary angle `k`; does
    /// not read the ghost ring.
    pub fn normal_derivative_one_sided(&self, values: &[f64], k: usize) -> f64 {
        let rule = &self.ghost_rules[k];
        let b = self.n_rho - 1;
        let ur = (3.0 * values[self.index(b, k)] - 4.0 * values[self.index(b - 1, k)]
            + values[self.index(b - 2, k)])
            / (2.0 * self.h_rho);
        rule.alpha * ur + rule.beta * self.boundary_u_theta(values, k)
    }

    /// Owned nodes whose boundary distance is below `mu`.
    pub fn omega_mu_nodes(&self, mu: f64) -> Result<Vec<usize>> {
        let reach = self.domain.reach();
        if !(mu > 0.0 && mu < reach) {
            return Err(Error::Config(format!(
                "collar width mu={mu} must lie in (0, reach={reach})"
            )));
        }
        let mut out = Vec::new();
        for i in 0..self.n_owned() {
            if self.kind(i) == NodeKind::Boundary || self.domain.distance(self.positions[i])?.d < mu {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Snapshot text: a header line and one `rho theta x y u` line per owned
    /// node, rings outermost loop.
    pub fn snapshot_string(&self, field: &ScalarField) -> String {
        let (a, b) = self.domain.semi_axes();
        let mut out = format!(
            "kind={} a={:e} b={:e} n_rho={} n_theta={} t={:e}\n",
            self.domain.kind_name(),
            a,
            b,
            self.n_rho,
            self.n_theta,
            field.t
        );
        for i in 0..self.n_owned() {
            let (j, k) = self.ring_angle(i);
            let x = self.positions[i];
            out.push_str(&format!(
                "{:e} {:e} {:e} {:e} {:e}\n",
                self.rho(j),
                self.theta(k),
                x[0],
                x[1],
                field.value(i)
            ));
        }
        out
    }

    pub fn write_snapshot(&self, field: &ScalarField, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.snapshot_string(field).as_bytes())?;
        Ok(())
    }
}

/// Reads a snapshot back. Ghost values are filled by linear extrapolation
/// and should be refreshed with `apply_neumann`.
pub fn read_snapshot(path: &Path) -> Result<(Grid, ScalarField)> {
    let text = fs::read_to_string(path)?;
    parse_snapshot(&text, path)
}

pub fn parse_snapshot(text: &str, path: &Path) -> Result<(Grid, ScalarField)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty snapshot".into()))?;
    let mut kind = None;
    let (mut a, mut b, mut n_rho, mut n_theta, mut t) = (None, None, None, None, None);
    for tok in header.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| err(1, format!("expected key=value, found '{tok}'")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| err(1, format!("{key}: {e}")));
        let int = |v: &str| v.parse::<usize>().map_err(|e| err(1, format!("{key}: {e}")));
        match key {
            "kind" => kind = Some(val.to_string()),
            "a" => a = Some(num(val)?),
            "b" => b = Some(num(val)?),
            "n_rho" => n_rho = Some(int(val)?),
            "n_theta" => n_theta = Some(int(val)?),
            "t" => t = Some(num(val)?),
            _ => return Err(err(1, format!("unknown header key '{key}'"))),
        }
    }
    let missing = |k: &str| err(1, format!("missing header key '{k}'"));
    let (a, b) = (a.ok_or_else(|| missing("a"))?, b.ok_or_else(|| missing("b"))?);
    let spec = match kind.as_deref() {
        Some("disk") => DomainSpec::Disk { radius: a },
        Some("ellipse") => DomainSpec::Ellipse { a, b },
        Some(other) => return Err(err(1, format!("unknown domain kind '{other}'"))),
        None => return Err(missing("kind")),
    };
    let grid = Grid::from_spec(
        spec,
        n_rho.ok_or_else(|| missing("n_rho"))?,
        n_theta.ok_or_else(|| missing("n_theta"))?,
    )?;
    let mut values = vec![0.0; grid.n_ext()];
    let mut count = 0;
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(err(ln + 2, format!("expected 5 columns, found {}", cols.len())));
        }
        if count >= grid.n_owned() {
            return Err(err(ln + 2, "more node lines than the header allows".into()));
        }
        values[count] = cols[4]
            .parse::<f64>()
            .map_err(|e| err(ln + 2, format!("value: {e}")))?;
        count += 1;
    }
    if count != grid.n_owned() {
        return Err(err(
            text.lines().count(),
            format!("expected {} node lines, found {count}", grid.n_owned()),
        ));
    }
    let b_ring = grid.n_rho() - 1;
    for k in 0..grid.n_theta() {
        let ub = values[grid.index(b_ring, k)];
        let ui = values[grid.index(b_ring - 1, k)];
        values[grid.index(grid.n_rho(), k)] = 2.0 * ub - ui;
    }
    Ok((grid, ScalarField::from_absolute(values, t.ok_or_else(|| missing("t"))?)))
}
