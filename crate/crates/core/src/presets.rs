//! Initial-data profiles and ready-made problems with known structure.

use crate::error::Result;
use crate::forcing::{FluxTerm, ForceTerm, ForcingSpec};
use crate::symfunc::{ConeVector, CurvatureFunction};

/// Initial height profile, optionally with a non-symmetric cubic bump
/// `bump * x_1 |x|^2` that breaks compatibility with the Neumann data.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialProfile {
    /// `-sqrt(rho^2 - |x|^2) - delta (offset - |x|^2)`
    SphereCap {
        sphere_radius: f64,
        delta: f64,
        offset: f64,
    },
    /// `height + curvature |x|^2 / 2`
    Paraboloid { height: f64, curvature: f64 },
    /// `amplitude (x_1^2 - x_2^2) + 0.5 |x|^2 tilt`; not convex when
    /// `amplitude > tilt / 2`.
    Saddle { amplitude: f64, tilt: f64 },
    /// Values at the owned grid nodes, in grid order.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub profile: InitialProfile,
    pub bump: f64,
}

impl InitialData {
    pub fn new(profile: InitialProfile) -> Self {
        Self { profile, bump: 0.0 }
    }

    pub fn with_bump(mut self, bump: f64) -> Self {
        self.bump = bump;
        self
    }

    /// Value at `x`; `None` for node-valued data.
    pub fn eval(&self, x: [f64; 2]) -> Option<f64> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let base = match &self.profile {
            InitialProfile::SphereCap {
                sphere_radius,
                delta,
                offset,
            } => -(sphere_radius * sphere_radius - r2).sqrt() - delta * (offset - r2),
            InitialProfile::Paraboloid { height, curvature } => height + 0.5 * curvature * r2,
            InitialProfile::Saddle { amplitude, tilt } => {
                amplitude * (x[0] * x[0] - x[1] * x[1]) + 0.5 * tilt * r2
            }
            InitialProfile::Values(_) => return None,
        };
        Some(base + self.bump * x[0] * r2)
    }

    /// Radial profile `u(r)` when the data is rotationally symmetric.
    pub fn radial(&self, r: f64) -> Option<f64> {
        if self.bump != 0.0 {
            return None;
        }
        match &self.profile {
            InitialProfile::SphereCap { .. } | InitialProfile::Paraboloid { .. } => self.eval([r, 0.0]),
            _ => None,
        }
    }
}

/// Spherical cap over a disk: the lower hemisphere of radius
/// `sphere_radius` is the exact stationary solution, with `Phi = f(1/rho)`
/// and `phi(x, z) = R/sqrt(rho^2 - R^2) - slope (z - z*)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereCap {
    pub domain_radius: f64,
    pub sphere_radius: f64,
    pub slope: f64,
    pub delta: f64,
}

impl Default for SphereCap {
    fn default() -> Self {
        Self {
            domain_radius: 1.0,
            sphere_radius: 2.0,
            slope: 1.0,
            delta: 0.1,
        }
    }
}

impl SphereCap {
    /// `u*(r) = -sqrt(rho^2 - r^2)`
    pub fn exact_radial(&self, r: f64) -> f64 {
        -(self.sphere_radius * self.sphere_radius - r * r).sqrt()
    }

    pub fn exact(&self, x: [f64; 2]) -> f64 {
        self.exact_radial(x[0].hypot(x[1]))
    }

    /// Boundary height `z*` of the stationary cap.
    pub fn z_star(&self) -> f64 {
        self.exact_radial(self.domain_radius)
    }

    /// Offset `c` in `u0 = u* - delta (c - r^2)` making `u0` satisfy the
    /// Neumann condition exactly.
    pub fn offset(&self) -> f64 {
        let r = self.domain_radius;
        r * r + 2.0 * r / self.slope
    }

    pub fn forcing(&self, f: &CurvatureFunction) -> Result<ForcingSpec> {
        let k = 1.0 / self.sphere_radius;
        let value = f.eval(&ConeVector::new(vec![k; f.dim()])?)?;
        let r = self.domain_radius;
        Ok(ForcingSpec::new(
            ForceTerm::Constant { value },
            FluxTerm::linear(
                r / (self.sphere_radius * self.sphere_radius - r * r).sqrt(),
                self.slope,
                self.z_star(),
            ),
        ))
    }

    pub fn initial(&self) -> InitialData {
        InitialData::new(InitialProfile::SphereCap {
            sphere_radius: self.sphere_radius,
            delta: self.delta,
            offset: self.offset(),
        })
    }

    /// The stationary cap itself as initial data.
    pub fn stationary_initial(&self) -> InitialData {
        InitialData::new(InitialProfile::SphereCap {
            sphere_radius: self.sphere_radius,
            delta: 0.0,
            offset: 0.0,
        })
    }
}

/// Paraboloid initial data over an ellipse with Neumann data it satisfies
/// exactly, and a constant force below `F` of the initial surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParaboloid {
    pub a: f64,
    pub b: f64,
    pub curvature: f64,
    pub height: f64,
    pub slope: f64,
    /// `Phi` as a fraction of the smallest `F` of the initial surface.
    pub force_fraction: f64,
}

impl Default for EllipseParaboloid {
    fn default() -> Self {
        Self {
            a: 1.5,
            b: 1.0,
            curvature: 1.0,
            height: 0.0,
            slope: 1.0,
            force_fraction: 0.8,
        }
    }
}

impl EllipseParaboloid {
    /// Smallest `F` of `height + c r^2/2` over `r <= max(a, b)`; the principal
    /// curvatures are `c/w^3` and `c/w`.
    pub fn min_initial_f(&self, f: &CurvatureFunction) -> Result<f64> {
        let rmax = self.a.max(self.b);
        let mut lo = f64::INFINITY;
        for i in 0..=400 {
            let r = rmax * i as f64 / 400.0;
            let c = self.curvature;
            let w = (1.0 + c * c * r * r).sqrt();
            let mut k = vec![c / w; f.dim()];
            k[0] = c / (w * w * w);
            lo = lo.min(f.eval(&ConeVector::new(k)?)?);
        }
        Ok(lo)
    }

    pub fn forcing(&self, f: &CurvatureFunction) -> Result<ForcingSpec> {
        Ok(ForcingSpec::new(
            ForceTerm::Constant {
                value: self.force_fraction * self.min_initial_f(f)?,
            },
            FluxTerm::Paraboloid {
                curvature: self.curvature,
                height: self.height,
                slope: self.slope,
                semi_axes: (self.a, self.b),
            },
        ))
    }

    pub fn initial(&self) -> InitialData {
        InitialData::new(InitialProfile::Paraboloid {
            height: self.height,
            curvature: self.curvature,
        })
    }
}
