//! Run configuration read from a TOML file.
//!
//! ```toml
//! [domain]
//! kind = "disk"
//! radius = 1.0
//!
//! [grid]
//! n_rho = 64
//! n_theta = 64
//!
//! [curvature]
//! family = "combined"
//! n = 2
//! l = 1
//!
//! [sphere]
//! sphere_radius = 2.0
//! slope = 1.0
//! delta = 0.1
//!
//! [forcing]
//! kind = "sphere"
//!
//! [flux]
//! kind = "sphere"
//!
//! [initial]
//! kind = "sphere_cap"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::domain::{build_domain, DomainSpec};
use crate::error::{Error, Result};
use crate::flow::{BarrierParams, FlowConfig, Scheme};
use crate::forcing::{FluxTerm, ForceTerm, ForcingSpec};
use crate::presets::{InitialData, InitialProfile, SphereCap};
use crate::symfunc::{CurvatureFunction, Family};

/// Half-width of the `z` range on which the hypotheses on `Phi` and `phi`
/// are sampled.
pub const HYPOTHESIS_Z_BOUND: f64 = 10.0;

/// Default grid resolution.
pub const DEFAULT_RESOLUTION: (usize, usize) = (64, 64);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: RawDomain,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    curvature: RawCurvature,
    #[serde(default)]
    sphere: RawSphere,
    forcing: RawForce,
    flux: RawFlux,
    initial: RawInitial,
    #[serde(default)]
    solver: RawSolver,
    barrier: Option<RawBarrier>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawDomain {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "default_n_rho")]
    n_rho: usize,
    #[serde(default = "default_n_theta")]
    n_theta: usize,
}

fn default_n_rho() -> usize {
    DEFAULT_RESOLUTION.0
}

fn default_n_theta() -> usize {
    DEFAULT_RESOLUTION.1
}

impl Default for RawGrid {
    fn default() -> Self {
        Self {
            n_rho: default_n_rho(),
            n_theta: default_n_theta(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurvature {
    family: String,
    n: usize,
    l: Option<usize>,
    k: Option<usize>,
    scale: Option<f64>,
}

impl Default for RawCurvature {
    fn default() -> Self {
        Self {
            family: "combined".into(),
            n: 2,
            l: Some(1),
            k: None,
            scale: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSphere {
    #[serde(default = "default_sphere_radius")]
    sphere_radius: f64,
    #[serde(default = "default_slope")]
    slope: f64,
    #[serde(default = "default_delta")]
    delta: f64,
}

fn default_sphere_radius() -> f64 {
    SphereCap::default().sphere_radius
}

fn default_slope() -> f64 {
    SphereCap::default().slope
}

fn default_delta() -> f64 {
    SphereCap::default().delta
}

impl Default for RawSphere {
    fn default() -> Self {
        Self {
            sphere_radius: default_sphere_radius(),
            slope: default_slope(),
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawForce {
    Constant { value: f64 },
    Affine { base: f64, slope: f64 },
    Sphere,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawFlux {
    Linear { offset: f64, slope: f64, reference: f64 },
    Paraboloid { curvature: f64, height: f64, slope: f64 },
    Sphere,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawInitial {
    SphereCap {
        #[serde(default)]
        bump: f64,
    },
    Paraboloid {
        height: f64,
        curvature: f64,
        #[serde(default)]
        bump: f64,
    },
    Saddle {
        amplitude: f64,
        tilt: f64,
    },
    Snapshot {
        path: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    scheme: Option<String>,
    tol_res: Option<f64>,
    t_max: Option<f64>,
    max_steps: Option<usize>,
    safety: Option<f64>,
    monitor_every: Option<usize>,
    dt_initial: Option<f64>,
    dt_growth: Option<f64>,
    dt_max: Option<f64>,
    positivity_control: Option<bool>,
}

impl Default for RawSolver {
    fn default() -> Self {
        toml::from_str("").expect("all solver keys are optional")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBarrier {
    a_bar: Option<f64>,
    n: Option<f64>,
    mu: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub output_dir: Option<PathBuf>,
    /// File the configuration was read from, if any.
    pub source: Option<PathBuf>,
}

impl RunConfig {
    /// The sphere-cap problem at the given resolution.
    pub fn sphere_cap(n_rho: usize, n_theta: usize) -> Result<Self> {
        let rc = Self {
            flow: FlowConfig::sphere_cap(n_rho, n_theta)?,
            output_dir: None,
            source: None,
        };
        rc.validate()?;
        Ok(rc)
    }

    /// Structural checks plus the sampled hypotheses on `Phi` and `phi`.
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.flow.check_hypotheses(HYPOTHESIS_Z_BOUND)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn curvature_function(c: &RawCurvature) -> Result<CurvatureFunction> {
    let need = |v: Option<usize>, key: &str| {
        v.ok_or_else(|| Error::Config(format!("curvature family {} needs `{key}`", c.family)))
    };
    let family = match c.family.as_str() {
        "combined" => Family::Combined { l: need(c.l, "l")? },
        "quotient" => Family::Quotient { l: need(c.l, "l")? },
        "kth_root" => Family::KthRoot { k: need(c.k, "k")? },
        other => {
            return Err(Error::Config(format!(
                "unknown curvature family `{other}` (expected combined, quotient or kth_root)"
            )))
        }
    };
    let f = CurvatureFunction::new(family, c.n)?;
    Ok(match c.scale {
        Some(s) => f.scaled(s),
        None => f,
    })
}

/// Parses a configuration from TOML text; `path` is used in messages and to
/// resolve relative snapshot paths.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let domain = match raw.domain {
        RawDomain::Disk { radius } => DomainSpec::Disk { radius },
        RawDomain::Ellipse { a, b } => DomainSpec::Ellipse { a, b },
    };
    let dom = build_domain(domain)?;
    let f = curvature_function(&raw.curvature)?;
    let s = &raw.sphere;
    let cap = SphereCap {
        domain_radius: dom.semi_axes().0,
        sphere_radius: s.sphere_radius,
        slope: s.slope,
        delta: s.delta,
    };
    let uses_sphere = matches!(raw.forcing, RawForce::Sphere)
        || matches!(raw.flux, RawFlux::Sphere)
        || matches!(raw.initial, RawInitial::SphereCap { .. });
    if uses_sphere && (dom.kind() != crate::domain::DomainKind::Disk || !(s.sphere_radius > cap.domain_radius)) {
        return Err(Error::Config(
            "sphere presets need a disk domain and sphere_radius larger than its radius".into(),
        ));
    }
    let sphere_forcing = if uses_sphere { Some(cap.forcing(&f)?) } else { None };
    let force = match raw.forcing {
        RawForce::Constant { value } => ForceTerm::Constant { value },
        RawForce::Affine { base, slope } => ForceTerm::Affine { base, slope },
        RawForce::Sphere => sphere_forcing.as_ref().expect("sphere preset").force.clone(),
    };
    let flux = match raw.flux {
        RawFlux::Linear { offset, slope, reference } => FluxTerm::linear(offset, slope, reference),
        RawFlux::Paraboloid { curvature, height, slope } => FluxTerm::Paraboloid {
            curvature,
            height,
            slope,
            semi_axes: dom.semi_axes(),
        },
        RawFlux::Sphere => sphere_forcing.as_ref().expect("sphere preset").flux.clone(),
    };
    let (n_rho, n_theta) = (raw.grid.n_rho, raw.grid.n_theta);
    let initial = match raw.initial {
        RawInitial::SphereCap { bump } => cap.initial().with_bump(bump),
        RawInitial::Paraboloid { height, curvature, bump } => {
            InitialData::new(InitialProfile::Paraboloid { height, curvature }).with_bump(bump)
        }
        RawInitial::Saddle { amplitude, tilt } => InitialData::new(InitialProfile::Saddle { amplitude, tilt }),
        RawInitial::Snapshot { path: snap } => {
            let snap = match path.parent() {
                Some(dir) if snap.is_relative() => dir.join(snap),
                _ => snap,
            };
            let (g, field) = crate::grid::read_snapshot(&snap)?;
            if g.n_rho() != n_rho || g.n_theta() != n_theta {
                return Err(Error::Config(format!(
                    "snapshot {} is {}x{}, grid is {n_rho}x{n_theta}",
                    snap.display(),
                    g.n_rho(),
                    g.n_theta()
                )));
            }
            InitialData::new(InitialProfile::Values(field.absolute()[..g.n_owned()].to_vec()))
        }
    };
    let mut flow = FlowConfig::base(domain, n_rho, n_theta, f);
    flow.forcing = ForcingSpec::new(force, flux);
    flow.initial = initial;
    let sv = &raw.solver;
    if let Some(scheme) = &sv.scheme {
        flow.scheme = match scheme.as_str() {
            "implicit" => Scheme::LinearlyImplicit,
            "explicit" => Scheme::ExplicitEuler,
            other => {
                return Err(Error::Config(format!(
                    "unknown scheme `{other}` (expected implicit or explicit)"
                )))
            }
        };
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = sv.$field { flow.$field = v; } )* };
    }
    set!(tol_res, t_max, max_steps, safety, monitor_every, dt_initial, dt_growth, dt_max, positivity_control);
    if let Some(b) = raw.barrier {
        let d = BarrierParams::defaults(&dom);
        let mu = b.mu.unwrap_or(d.mu);
        flow.barrier = Some(BarrierParams {
            a_bar: b.a_bar.unwrap_or(d.a_bar),
            n: b.n.unwrap_or(1.0 / (8.0 * mu)),
            mu,
        });
    }
    let rc = RunConfig {
        flow,
        output_dir: raw.output.dir,
        source: Some(path.to_path_buf()),
    };
    rc.validate()?;
    Ok(rc)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text, path)
}

/// Parses `NRHOxNTHETA`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("resolution must look like 64x64 (got `{s}`)"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
[domain]
kind = "disk"
radius = 1.0

[grid]
n_rho = 16
n_theta = 16

[forcing]
kind = "sphere"

[flux]
kind = "sphere"

[initial]
kind = "sphere_cap"

[barrier]
"#;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config(text, Path::new("test.toml"))
    }

    #[test]
    fn sphere_file_matches_the_preset() {
        let rc = parse(SPHERE).unwrap();
        let preset = FlowConfig::sphere_cap(16, 16).unwrap();
        assert_eq!(rc.flow, preset);
    }

    #[test]
    fn negative_force_is_rejected() {
        let text = SPHERE.replace("[forcing]\nkind = \"sphere\"", "[forcing]\nkind = \"constant\"\nvalue = -1.0");
        match parse(&text) {
            Err(Error::Hypotheses(v)) => assert!(v.iter().any(|h| h.hypothesis.contains("positivity of Phi"))),
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn flat_flux_is_rejected() {
        let text = SPHERE.replace(
            "[flux]\nkind = \"sphere\"",
            "[flux]\nkind = \"linear\"\noffset = 0.5\nslope = 0.0\nreference = 0.0",
        );
        match parse(&text) {
            Err(Error::Hypotheses(v)) => assert!(v.iter().any(|h| h.hypothesis.contains("strict negativity"))),
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = SPHERE.replace("n_theta = 16", "n_theta = sixteen");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = SPHERE.replace("[initial]\nkind = \"sphere_cap\"", "[initial]\nkind = \"cone\"");
        assert!(matches!(parse(&text), Err(Error::Parse { line: 17 | 18, .. })));
    }

    #[test]
    fn solver_and_family_options() {
        let text = format!(
            "{SPHERE}\n[solver]\nscheme = \"explicit\"\ntol_res = 1e-7\n\n[output]\ndir = \"out\"\n"
        )
        .replace("[barrier]\n", "");
        let rc = parse(&text).unwrap();
        assert_eq!(rc.flow.scheme, Scheme::ExplicitEuler);
        assert_eq!(rc.flow.tol_res, 1e-7);
        assert_eq!(rc.flow.barrier, None);
        assert_eq!(rc.output_dir, Some(PathBuf::from("out")));
        let text = SPHERE.replace("[forcing]", "[curvature]\nfamily = \"kth_root\"\nn = 2\n\n[forcing]");
        assert!(matches!(parse(&text), Err(Error::Config(m)) if m.contains("`k`")));
    }

    #[test]
    fn ellipse_config() {
        let text = r#"
[domain]
kind = "ellipse"
a = 1.5
b = 1.0

[forcing]
kind = "constant"
value = 0.3

[flux]
kind = "paraboloid"
curvature = 1.0
height = 0.0
slope = 1.0

[initial]
kind = "paraboloid"
height = 0.0
curvature = 1.0
"#;
        let rc = parse(text).unwrap();
        assert_eq!((rc.flow.n_rho, rc.flow.n_theta), DEFAULT_RESOLUTION);
        let bad = text.replace("kind = \"constant\"\nvalue = 0.3", "kind = \"sphere\"");
        assert!(matches!(parse(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn resolution_strings() {
        assert_eq!(parse_resolution("32x48").unwrap(), (32, 48));
        assert!(parse_resolution("32").is_err());
        assert!(parse_resolution("ax4").is_err());
    }
}
