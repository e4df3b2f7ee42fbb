use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A sampled point at which a structural hypothesis on the data fails.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisViolation {
    pub hypothesis: &'static str,
    pub x: Vec<f64>,
    pub z: f64,
    pub value: f64,
}

impl fmt::Display for HypothesisViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at x={:?}, z={} (value {})",
            self.hypothesis, self.x, self.z, self.value
        )
    }
}

/// Diagnostics for a grid node where the curvature spectrum left the positive cone.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownNode {
    pub node: usize,
    pub ring: usize,
    pub angle_index: usize,
    pub position: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub t: f64,
}

impl fmt::Display for BreakdownNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "node {} (ring {}, angle {}) at x={:?}, t={}: curvature spectrum {:?}",
            self.node, self.ring, self.angle_index, self.position, self.t, self.spectrum
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("point is outside the positive cone (min entry {min_entry})")]
    ConeViolation { min_entry: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("hypotheses violated: {}", join_violations(.0))]
    Hypotheses(Vec<HypothesisViolation>),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(
        "initial data refused: compatibility residual {residual:e} exceeds tolerance {tolerance:e}"
    )]
    IncompatibleInitialData { residual: f64, tolerance: f64 },

    #[error("flow breakdown after {halvings} step halvings: {node}")]
    FlowBreakdown {
        node: Box<BreakdownNode>,
        halvings: usize,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[HypothesisViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
