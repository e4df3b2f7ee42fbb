//! Forcing `Phi(x, z)` and Neumann data `phi(x, z)` as parameterized presets.

use crate::error::HypothesisViolation;

#[derive(Debug, Clone, PartialEq)]
pub enum ForceTerm {
    Constant { value: f64 },
    /// `base + slope * z`
    Affine { base: f64, slope: f64 },
}

impl ForceTerm {
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            ForceTerm::Constant { value } => value,
            ForceTerm::Affine { base, slope } => base + slope * z,
        }
    }

    pub fn dz(&self) -> f64 {
        match *self {
            ForceTerm::Constant { .. } => 0.0,
            ForceTerm::Affine { slope, .. } => slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FluxTerm {
    /// `offset - slope * (z - reference)`
    Linear {
        offset: f64,
        slope: f64,
        reference: f64,
    },
    /// `g(x) - slope * z` with `g` chosen so that the paraboloid
    /// `height + curvature |x|^2 / 2` satisfies the condition on the ellipse
    /// with the given semi-axes.
    Paraboloid {
        curvature: f64,
        height: f64,
        slope: f64,
        semi_axes: (f64, f64),
    },
}

impl FluxTerm {
    pub fn linear(offset: f64, slope: f64, reference: f64) -> Self {
        FluxTerm::Linear {
            offset,
            slope,
            reference,
        }
    }

    pub fn value(&self, x: &[f64], z: f64) -> f64 {
        match *self {
            FluxTerm::Linear {
                offset,
                slope,
                reference,
            } => offset - slope * (z - reference),
            FluxTerm::Paraboloid {
                curvature,
                height,
                slope,
                semi_axes: (a, b),
            } => {
                let (px, py) = (x[0], x.get(1).copied().unwrap_or(0.0));
                let (gx, gy) = (px / (a * a), py / (b * b));
                let norm = gx.hypot(gy);
                // x . nu~ where nu~ is the normal of the confocal-scaled ellipse through x
                let x_dot_nu = if norm > 0.0 { (px * gx + py * gy) / norm } else { 0.0 };
                let r2 = px * px + py * py;
                curvature * x_dot_nu + slope * (height + 0.5 * curvature * r2) - slope * z
            }
        }
    }

    pub fn dz(&self) -> f64 {
        match *self {
            FluxTerm::Linear { slope, .. } | FluxTerm::Paraboloid { slope, .. } => -slope,
        }
    }
}

/// Forcing term and Neumann data for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub force: ForceTerm,
    pub flux: FluxTerm,
}

impl ForcingSpec {
    pub fn new(force: ForceTerm, flux: FluxTerm) -> Self {
        Self { force, flux }
    }

    /// `Phi(x, z)`
    pub fn force(&self, _x: &[f64], z: f64) -> f64 {
        self.force.value(z)
    }

    pub fn force_z(&self, _x: &[f64], _z: f64) -> f64 {
        self.force.dz()
    }

    /// `phi(x, z)`
    pub fn flux(&self, x: &[f64], z: f64) -> f64 {
        self.flux.value(x, z)
    }

    pub fn flux_z(&self, _x: &[f64], _z: f64) -> f64 {
        self.flux.dz()
    }

    /// Upper bound `c_phi` for `phi_z`.
    pub fn c_phi(&self) -> f64 {
        self.flux.dz()
    }

    /// Checks `Phi > 0`, `Phi_z >= 0` and `phi_z <= c_phi < 0` at every
    /// `(x, z)` with `x` in `points` and `z` on a uniform ladder in
    /// `[-z_bound, z_bound]`. Reports one witness per violated hypothesis.
    pub fn validate(&self, points: &[Vec<f64>], z_bound: f64) -> Vec<HypothesisViolation> {
        const Z_SAMPLES: usize = 21;
        let zs: Vec<f64> = (0..Z_SAMPLES)
            .map(|i| -z_bound + 2.0 * z_bound * i as f64 / (Z_SAMPLES - 1) as f64)
            .collect();
        let mut found: Vec<HypothesisViolation> = Vec::new();
        let mut record = |v: HypothesisViolation| {
            if !found.iter().any(|f| f.hypothesis == v.hypothesis) {
                found.push(v);
            }
        };
        let c_phi = self.c_phi();
        if c_phi >= 0.0 {
            record(HypothesisViolation {
                hypothesis: "strict negativity of phi_z (c_phi < 0)",
                x: points.first().cloned().unwrap_or_default(),
                z: 0.0,
                value: c_phi,
            });
        }
        for x in points {
            for &z in &zs {
                let phi = self.force(x, z);
                if !(phi > 0.0) {
                    record(HypothesisViolation {
                        hypothesis: "positivity of Phi",
                        x: x.clone(),
                        z,
                        value: phi,
                    });
                }
                let phi_z = self.force_z(x, z);
                if !(phi_z >= 0.0) {
                    record(HypothesisViolation {
                        hypothesis: "monotonicity of Phi in z (Phi_z >= 0)",
                        x: x.clone(),
                        z,
                        value: phi_z,
                    });
                }
                let flux_z = self.flux_z(x, z);
                if flux_z > c_phi {
                    record(HypothesisViolation {
                        hypothesis: "phi_z bounded by c_phi",
                        x: x.clone(),
                        z,
                        value: flux_z,
                    });
                }
            }
        }
        found
    }
}
