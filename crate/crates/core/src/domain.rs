//! Strictly convex planar domains centered at the origin.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

const NEWTON_ITERS: usize = 30;
const NEWTON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Disk,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    a: f64,
    b: f64,
    curvature_min: f64,
    curvature_max: f64,
}

/// Boundary distance and its first two derivatives at an interior point.
#[derive(Debug, Clone, PartialEq)]
pub struct Distance {
    pub d: f64,
    /// `Dd`; equals minus the outward normal at the foot point.
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
    pub foot: [f64; 2],
    pub foot_param: f64,
}

pub fn build_domain(spec: DomainSpec) -> Result<Domain> {
    let (kind, a, b) = match spec {
        DomainSpec::Disk { radius } => (DomainKind::Disk, radius, radius),
        DomainSpec::Ellipse { a, b } => (DomainKind::Ellipse, a, b),
    };
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Config(format!(
            "domain axes must be positive and finite (got a={a}, b={b})"
        )));
    }
    let (lo, hi) = (a.min(b), a.max(b));
    Ok(Domain {
        kind,
        a,
        b,
        curvature_min: lo / (hi * hi),
        curvature_max: hi / (lo * lo),
    })
}

impl Domain {
    pub fn disk(radius: f64) -> Result<Self> {
        build_domain(DomainSpec::Disk { radius })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        build_domain(DomainSpec::Ellipse { a, b })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DomainKind::Disk => "disk",
            DomainKind::Ellipse => "ellipse",
        }
    }

    pub fn semi_axes(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Smallest boundary curvature.
    pub fn curvature_min(&self) -> f64 {
        self.curvature_min
    }

    /// Largest boundary curvature.
    pub fn curvature_max(&self) -> f64 {
        self.curvature_max
    }

    /// Width of the collar on which the distance function is smooth.
    pub fn reach(&self) -> f64 {
        1.0 / self.curvature_max
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (x[0] / self.a).powi(2) + (x[1] / self.b).powi(2) <= 1.0 + 1e-12
    }

    pub fn boundary_point(&self, s: f64) -> [f64; 2] {
        [self.a * s.cos(), self.b * s.sin()]
    }

    pub fn boundary_normal(&self, s: f64) -> [f64; 2] {
        let n = [self.b * s.cos(), self.a * s.sin()];
        let len = n[0].hypot(n[1]);
        [n[0] / len, n[1] / len]
    }

    pub fn boundary_curvature(&self, s: f64) -> f64 {
        let (sn, cs) = s.sin_cos();
        self.a * self.b / (self.a * self.a * sn * sn + self.b * self.b * cs * cs).powf(1.5)
    }

    /// Outward unit normal of the level set `x^2/a^2 + y^2/b^2 = const`
    /// through `x`; the boundary normal on the boundary.
    pub fn level_normal(&self, x: [f64; 2]) -> [f64; 2] {
        let g = [x[0] / (self.a * self.a), x[1] / (self.b * self.b)];
        let len = g[0].hypot(g[1]);
        if len == 0.0 {
            [1.0, 0.0]
        } else {
            [g[0] / len, g[1] / len]
        }
    }

    fn foot_newton(&self, x: [f64; 2], s0: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let mut s = s0;
        for _ in 0..NEWTON_ITERS {
            let (sn, cs) = s.sin_cos();
            let (px, py) = (a * cs, b * sn);
            let (tx, ty) = (-a * sn, b * cs);
            let g = (x[0] - px) * tx + (x[1] - py) * ty;
            let dg = -(tx * tx + ty * ty) + (x[0] - px) * (-a * cs) + (x[1] - py) * (-b * sn);
            if dg == 0.0 {
                break;
            }
            let step = g / dg;
            s -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        s.rem_euclid(TAU)
    }

    fn dist_to(&self, x: [f64; 2], s: f64) -> f64 {
        let p = self.boundary_point(s);
        (x[0] - p[0]).hypot(x[1] - p[1])
    }

    pub fn distance(&self, x: [f64; 2]) -> Result<Distance> {
        if !self.contains(x) {
            return Err(Error::Domain(format!(
                "point {x:?} lies outside the {} domain",
                self.kind_name()
            )));
        }
        let s = match self.kind {
            DomainKind::Disk => {
                if x[0] == 0.0 && x[1] == 0.0 {
                    0.0
                } else {
                    x[1].atan2(x[0]).rem_euclid(TAU)
                }
            }
            DomainKind::Ellipse => {
                let start = (x[1] / self.b).atan2(x[0] / self.a);
                let mut best = self.foot_newton(x, start);
                let mut best_d = self.dist_to(x, best);
                for k in 0..8 {
                    let cand = self.foot_newton(x, k as f64 * TAU / 8.0);
                    let d = self.dist_to(x, cand);
                    if d < best_d - 1e-15 {
                        best = cand;
                        best_d = d;
                    }
                }
                best
            }
        };
        let foot = self.boundary_point(s);
        let d = match self.kind {
            DomainKind::Disk => (self.a - x[0].hypot(x[1])).max(0.0),
            DomainKind::Ellipse => self.dist_to(x, s),
        };
        let nu = self.boundary_normal(s);
        let kappa = self.boundary_curvature(s);
        let t = [-nu[1], nu[0]];
        let c = -kappa / (1.0 - kappa * d);
        Ok(Distance {
            d,
            grad: [-nu[0], -nu[1]],
            hess: [
                [c * t[0] * t[0], c * t[0] * t[1]],
                [c * t[1] * t[0], c * t[1] * t[1]],
            ],
            foot,
            foot_param: s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_bounds() {
        let d = Domain::disk(1.0).unwrap();
        assert_eq!((d.curvature_min(), d.curvature_max()), (1.0, 1.0));
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        assert!((e.curvature_min() - 0.25).abs() < 1e-15);
        assert!((e.curvature_max() - 2.0).abs() < 1e-15);
        let c = Domain::ellipse(1.5, 1.5).unwrap();
        assert!((c.curvature_min() - 1.0 / 1.5).abs() < 1e-15);
        assert!((c.curvature_max() - 1.0 / 1.5).abs() < 1e-15);
        for bad in [DomainSpec::Disk { radius: 0.0 }, DomainSpec::Ellipse { a: 1.0, b: -1.0 }] {
            assert!(matches!(build_domain(bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn boundary_curvature_extremes() {
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        let ks: Vec<f64> = (0..1000).map(|i| e.boundary_curvature(i as f64 * TAU / 1000.0)).collect();
        let lo = ks.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ks.iter().copied().fold(0.0, f64::max);
        assert!((lo - e.curvature_min()).abs() < 1e-12);
        assert!((hi - e.curvature_max()).abs() < 1e-12);
    }

    #[test]
    fn disk_distance() {
        let d = Domain::disk(1.0).unwrap();
        let c = d.distance([0.0, 0.0]).unwrap();
        assert_eq!(c.d, 1.0);
        let h = d.distance([0.3, 0.4]).unwrap();
        assert!((h.d - 0.5).abs() < 1e-15);
        // -Dd is the outward normal at the foot point
        let nu = d.boundary_normal(h.foot_param);
        assert!((h.grad[0] + nu[0]).abs() < 1e-15 && (h.grad[1] + nu[1]).abs() < 1e-15);
        assert!((h.grad[0] + 0.6).abs() < 1e-15 && (h.grad[1] + 0.8).abs() < 1e-15);
        assert!(matches!(d.distance([1.0, 0.5]), Err(Error::Domain(_))));
    }

    /// Dense sampling of the boundary followed by golden-section refinement.
    fn brute_distance(e: &Domain, x: [f64; 2]) -> f64 {
        let n = 200_000;
        let (mut best_s, mut best) = (0.0, f64::INFINITY);
        for i in 0..n {
            let s = i as f64 * TAU / n as f64;
            let p = e.boundary_point(s);
            let d = (x[0] - p[0]).hypot(x[1] - p[1]);
            if d < best {
                best = d;
                best_s = s;
            }
        }
        let dist = |s: f64| {
            let p = e.boundary_point(s);
            (x[0] - p[0]).hypot(x[1] - p[1])
        };
        let (mut lo, mut hi) = (best_s - TAU / n as f64, best_s + TAU / n as f64);
        let g = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if dist(m1) < dist(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        dist(0.5 * (lo + hi))
    }

    #[test]
    fn ellipse_distance_against_sampling() {
        let e = Domain::ellipse(2.0, 1.0).unwrap();
        for x in [[0.0, 0.25], [1.2, 0.3], [-1.9, 0.0], [0.5, -0.9], [0.0, 0.0], [1.0, 0.0]] {
            let got = e.distance(x).unwrap().d;
            let want = brute_distance(&e, x);
            assert!((got - want).abs() < 1e-8, "x={x:?} got {got} want {want}");
        }
    }

    #[test]
    fn unit_gradient_and_tangential_hessian_near_boundary() {
        for dom in [Domain::disk(1.0).unwrap(), Domain::ellipse(1.5, 1.0).unwrap()] {
            let mu = 0.3 * dom.reach();
            for i in 0..40 {
                let s = i as f64 * TAU / 40.0;
                let foot = dom.boundary_point(s);
                let nu = dom.boundary_normal(s);
                for depth in [0.01 * mu, 0.5 * mu, 0.95 * mu] {
                    let x = [foot[0] - depth * nu[0], foot[1] - depth * nu[1]];
                    let dist = dom.distance(x).unwrap();
                    assert!((dist.d - depth).abs() < 1e-10);
                    let h = 1e-5;
                    let fd = [
                        (dom.distance([x[0] + h, x[1]]).unwrap().d - dom.distance([x[0] - h, x[1]]).unwrap().d) / (2.0 * h),
                        (dom.distance([x[0], x[1] + h]).unwrap().d - dom.distance([x[0], x[1] - h]).unwrap().d) / (2.0 * h),
                    ];
                    assert!((fd[0].hypot(fd[1]) - 1.0).abs() < 1e-8);
                    assert!((fd[0] - dist.grad[0]).abs() < 1e-8 && (fd[1] - dist.grad[1]).abs() < 1e-8);
                }
            }
        }
        // exact relation for the disk within 4% of the boundary
        let dom = Domain::disk(1.0).unwrap();
        for r in [0.96, 0.98, 0.999] {
            let dist = dom.distance([r * 0.6, r * 0.8]).unwrap();
            let t = [-0.8, 0.6];
            let dtt = dist.hess[0][0] * t[0] * t[0]
                + 2.0 * dist.hess[0][1] * t[0] * t[1]
                + dist.hess[1][1] * t[1] * t[1];
            let eps = 0.05;
            assert!(-dtt >= dom.curvature_min() * (1.0 - eps) && -dtt <= dom.curvature_max() * (1.0 + eps));
        }
    }
}
