//! Pointwise geometry of a graph `x -> (x, u(x))`: metric factors, the
//! curvature matrix, principal curvatures and the operator `F(A[u])` with its
//! first derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{symmetric_eigen, SymEigen};
use crate::symfunc::{ConeVector, CurvatureFunction};

pub use crate::forcing::{FluxTerm, ForceTerm, ForcingSpec};

/// `w`, `gamma^{ik}` and its inverse `gamma_{ij}` for a gradient `Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMetric {
    pub w: f64,
    pub gamma: DMatrix<f64>,
    pub gamma_inv: DMatrix<f64>,
}

impl GraphMetric {
    /// `g_{ij} = delta_ij + u_i u_j`.
    pub fn metric(du: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(du.len(), du.len()) + du * du.transpose()
    }

    /// `g^{ij} = delta_ij - u_i u_j / w^2`.
    pub fn inverse_metric(du: &DVector<f64>) -> DMatrix<f64> {
        let w2 = 1.0 + du.norm_squared();
        DMatrix::identity(du.len(), du.len()) - du * du.transpose() / w2
    }
}

pub fn graph_quantities(du: &DVector<f64>) -> GraphMetric {
    let n = du.len();
    let w = (1.0 + du.norm_squared()).sqrt();
    let outer = du * du.transpose();
    let gamma = DMatrix::identity(n, n) - &outer / (w * (1.0 + w));
    let gamma_inv = DMatrix::identity(n, n) + &outer / (1.0 + w);
    GraphMetric {
        w,
        gamma,
        gamma_inv,
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `a_ij = gamma^{ik} u_kl gamma^{lj} / w`.
pub fn curvature_matrix(du: &DVector<f64>, d2u: &DMatrix<f64>) -> DMatrix<f64> {
    let gm = graph_quantities(du);
    symmetrize(&(&gm.gamma * d2u * &gm.gamma / gm.w))
}

pub fn principal_curvatures(a: &DMatrix<f64>) -> SymEigen {
    symmetric_eigen(a)
}

/// `F(A)` and `F^{ij}(A)`; `F^{ij}` shares the eigenbasis of `A` with
/// eigenvalues `f_i(lambda(A))`.
pub fn f_and_fij(a: &DMatrix<f64>, f: &CurvatureFunction) -> Result<(f64, DMatrix<f64>)> {
    let eig = principal_curvatures(a);
    f_and_fij_from_eigen(&eig, f)
}

fn f_and_fij_from_eigen(eig: &SymEigen, f: &CurvatureFunction) -> Result<(f64, DMatrix<f64>)> {
    let lambda = ConeVector::new(eig.values.as_slice().to_vec())?;
    let value = f.eval(&lambda)?;
    let grad = f.grad(&lambda)?;
    Ok((value, symmetrize(&eig.reconstruct(&grad))))
}

/// Per-point geometric state of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPointData {
    pub du: DVector<f64>,
    pub d2u: DMatrix<f64>,
    pub w: f64,
    pub gamma: DMatrix<f64>,
    pub gamma_inv: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// Ascending principal curvatures.
    pub kappa: DVector<f64>,
    pub f_value: f64,
    pub fij: DMatrix<f64>,
    /// Vertical component of the upward unit normal, `1/w`.
    pub nu_vert: f64,
}

impl GraphPointData {
    pub fn new(du: DVector<f64>, d2u: DMatrix<f64>, f: &CurvatureFunction) -> Result<Self> {
        let gm = graph_quantities(&du);
        let a = symmetrize(&(&gm.gamma * &d2u * &gm.gamma / gm.w));
        let eig = principal_curvatures(&a);
        let (f_value, fij) = f_and_fij_from_eigen(&eig, f)?;
        Ok(Self {
            nu_vert: 1.0 / gm.w,
            w: gm.w,
            gamma: gm.gamma,
            gamma_inv: gm.gamma_inv,
            kappa: eig.values,
            a,
            f_value,
            fij,
            du,
            d2u,
        })
    }

    /// Second fundamental form `h_ij = u_ij / w`.
    pub fn second_fundamental_form(&self) -> DMatrix<f64> {
        &self.d2u / self.w
    }

    pub fn kappa_max(&self) -> f64 {
        self.kappa[self.kappa.len() - 1]
    }

    pub fn kappa_min(&self) -> f64 {
        self.kappa[0]
    }

    /// `G^{ij} = F^{kl} gamma^{ik} gamma^{lj} / w`.
    pub fn g_upper(&self) -> DMatrix<f64> {
        symmetrize(&(&self.gamma * &self.fij * &self.gamma / self.w))
    }

    /// `G^s`, the derivative of `F(A[u])` in `u_s` at fixed Hessian.
    pub fn g_gradient(&self) -> DVector<f64> {
        let n = self.du.len();
        let w = self.w;
        let u = &self.du;
        let fa = &self.fij * &self.a; // (F A)_{jk} = F^{ji} a_{ik}
        let c = 2.0 / (w * (1.0 + w));
        DVector::from_fn(n, |s, _| {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += fa[(j, k)] * (w * u[k] * self.gamma[(s, j)] + u[j] * self.gamma[(k, s)]);
                }
            }
            -u[s] * self.f_value / (w * w) - c * acc
        })
    }
}

/// Analytic `(G^{ij}, G^s)` for `G(D^2u, Du) = F(A[u])`.
pub fn g_derivatives(
    du: &DVector<f64>,
    d2u: &DMatrix<f64>,
    f: &CurvatureFunction,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = GraphPointData::new(du.clone(), d2u.clone(), f)?;
    Ok((p.g_upper(), p.g_gradient()))
}

/// Flow speed `w (F - Phi(x, u))`.
pub fn speed(point: &GraphPointData, forcing: &ForcingSpec, x: &[f64], u: f64) -> f64 {
    point.w * (point.f_value - forcing.force(x, u))
}

/// Returns an error carrying the smallest principal curvature when the
/// spectrum of `A[u]` is not in the positive cone.
pub fn require_convex(du: &DVector<f64>, d2u: &DMatrix<f64>) -> Result<()> {
    let eig = principal_curvatures(&curvature_matrix(du, d2u));
    ConeVector::new(eig.values.as_slice().to_vec()).map(|_| ())
}
