//! Admissible curvature functions on the positive cone.
//!
//! Every family here is symmetric, concave and homogeneous of degree one on
//! the open positive cone, normalized to one at `(1, ..., 1)`. Values are
//! built from the normalized elementary symmetric polynomials `H_k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative floor below which an entry counts as lying on the cone boundary.
pub const CONE_TOLERANCE: f64 = 1e-14;

/// A point of the open positive cone: every entry is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeVector(Vec<f64>);

impl ConeVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let scale = entries.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let min_entry = entries.iter().copied().fold(f64::INFINITY, f64::min);
        if entries.is_empty()
            || entries.iter().any(|v| !v.is_finite())
            || min_entry <= CONE_TOLERANCE * scale
        {
            return Err(Error::ConeViolation {
                min_entry: if entries.is_empty() { f64::NAN } else { min_entry },
            });
        }
        Ok(Self(entries))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * t).collect())
    }
}

/// Raw and normalized value of one elementary symmetric polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaK {
    pub raw: f64,
    pub normalized: f64,
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `sigma_0..=sigma_n` from the coefficients of `prod_i (1 + lambda_i t)`.
pub(crate) fn sigma_all(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &l) in lambda.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += l * e[k - 1];
        }
    }
    e
}

/// `sigma_k` of `lambda` with entry `skip` removed.
fn sigma_all_without(lambda: &[f64], skip: usize) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    let mut seen = 0;
    for (i, &l) in lambda.iter().enumerate() {
        if i == skip {
            continue;
        }
        for k in (1..=seen + 1).rev() {
            e[k] += l * e[k - 1];
        }
        seen += 1;
    }
    e
}

pub fn sigma_k(lambda: &ConeVector, k: usize) -> Result<SigmaK> {
    let n = lambda.len();
    if k > n {
        return Err(Error::IndexOutOfRange { index: k, max: n });
    }
    let raw = sigma_all(lambda.as_slice())[k];
    Ok(SigmaK {
        raw,
        normalized: raw / binomial(n, k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `H_k^{1/k}`
    KthRoot { k: usize },
    /// `(H_n / H_l)^{1/(n-l)}`
    Quotient { l: usize },
    /// `(H_n^{1/n} + (H_n / H_l)^{1/(n-l)}) / 2`
    Combined { l: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureFunction {
    family: Family,
    n: usize,
    scale: f64,
}

impl CurvatureFunction {
    pub fn new(family: Family, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        match family {
            Family::KthRoot { k } if k == 0 || k > n => {
                Err(Error::IndexOutOfRange { index: k, max: n })
            }
            Family::Quotient { l } | Family::Combined { l } if l >= n => {
                Err(Error::IndexOutOfRange { index: l, max: n - 1 })
            }
            _ => Ok(Self {
                family,
                n,
                scale: 1.0,
            }),
        }
    }

    pub fn combined(n: usize, l: usize) -> Result<Self> {
        Self::new(Family::Combined { l }, n)
    }

    pub fn quotient(n: usize, l: usize) -> Result<Self> {
        Self::new(Family::Quotient { l }, n)
    }

    pub fn kth_root(n: usize, k: usize) -> Result<Self> {
        Self::new(Family::KthRoot { k }, n)
    }

    /// Multiplies the function by `factor`. Breaks normalization unless
    /// `factor == 1`; used to probe linear dependence on `f`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn name(&self) -> String {
        match self.family {
            Family::KthRoot { k } => format!("kth-root(n={}, k={k})", self.n),
            Family::Quotient { l } => format!("quotient(n={}, l={l})", self.n),
            Family::Combined { l } => format!("combined(n={}, l={l})", self.n),
        }
    }

    fn check_dim(&self, lambda: &ConeVector) -> Result<()> {
        if lambda.len() != self.n {
            return Err(Error::Usage(format!(
                "curvature vector has {} entries, function expects {}",
                lambda.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn eval(&self, lambda: &ConeVector) -> Result<f64> {
        self.check_dim(lambda)?;
        let n = self.n;
        let s = sigma_all(lambda.as_slice());
        let h = |k: usize| s[k] / binomial(n, k);
        let root = |v: f64, p: usize| v.powf(1.0 / p as f64);
        let v = match self.family {
            Family::KthRoot { k } => root(h(k), k),
            Family::Quotient { l } => root(h(n) / h(l), n - l),
            Family::Combined { l } => 0.5 * (root(h(n), n) + root(h(n) / h(l), n - l)),
        };
        Ok(self.scale * v)
    }

    pub fn grad(&self, lambda: &ConeVector) -> Result<Vec<f64>> {
        self.check_dim(lambda)?;
        let n = self.n;
        let lam = lambda.as_slice();
        let s = sigma_all(lam);
        let h = |k: usize| s[k] / binomial(n, k);
        // d log H_k / d lambda_i
        let dlog = |k: usize, i: usize, without: &[f64]| -> f64 {
            if k == 0 {
                0.0
            } else if k == n {
                1.0 / lam[i]
            } else {
                without[k - 1] / s[k]
            }
        };
        let root = |v: f64, p: usize| v.powf(1.0 / p as f64);
        let g = (0..n)
            .map(|i| {
                let without = sigma_all_without(lam, i);
                let v = match self.family {
                    Family::KthRoot { k } => root(h(k), k) * dlog(k, i, &without) / k as f64,
                    Family::Quotient { l } => {
                        root(h(n) / h(l), n - l) * (dlog(n, i, &without) - dlog(l, i, &without))
                            / (n - l) as f64
                    }
                    Family::Combined { l } => {
                        0.5 * (root(h(n), n) * dlog(n, i, &without) / n as f64
                            + root(h(n) / h(l), n - l)
                                * (dlog(n, i, &without) - dlog(l, i, &without))
                                / (n - l) as f64)
                    }
                };
                self.scale * v
            })
            .collect();
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Monotonicity,
    Concavity,
    ConeBoundary,
    Normalization,
    Homogeneity,
    Growth,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::Monotonicity,
        Condition::Concavity,
        Condition::ConeBoundary,
        Condition::Normalization,
        Condition::Homogeneity,
        Condition::Growth,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Condition::Monotonicity => "monotonicity (all f_i > 0)",
            Condition::Concavity => "concavity (midpoint)",
            Condition::ConeBoundary => "positive inside, vanishing on the cone boundary",
            Condition::Normalization => "normalization f(1,...,1) = 1",
            Condition::Homogeneity => "degree-one homogeneity",
            Condition::Growth => "unbounded growth in one entry (ladder probe)",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureRow {
    pub condition: Condition,
    pub passed: bool,
    /// Worst observed value of the quantity the row tests.
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub function: String,
    pub sample_count: usize,
    pub seed: u64,
    pub rows: Vec<StructureRow>,
}

impl StructureReport {
    pub fn row(&self, c: Condition) -> &StructureRow {
        self.rows
            .iter()
            .find(|r| r.condition == c)
            .expect("every condition has a row")
    }

    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureOptions {
    pub sample_count: usize,
    pub seed: u64,
    /// Target `C` the growth probe must reach somewhere on the ladder.
    pub growth_target: f64,
    /// Multiplies every random sample; row outcomes must not depend on it.
    pub sample_scale: f64,
    pub concavity_slack: f64,
    pub homogeneity_tol: f64,
}

impl StructureOptions {
    pub fn new(sample_count: usize, seed: u64) -> Self {
        Self {
            sample_count,
            seed,
            growth_target: 5.0,
            sample_scale: 1.0,
            concavity_slack: 1e-10,
            homogeneity_tol: 1e-12,
        }
    }
}

pub const GROWTH_LADDER: [f64; 5] = [1.0, 1e1, 1e2, 1e3, 1e4];
const BOUNDARY_RAY: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];
const GROWTH_BASE_POINTS: usize = 8;

fn random_cone_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> ConeVector {
    let v = (0..n)
        .map(|_| scale * rng.random_range(-3.0_f64..3.0).exp())
        .collect();
    ConeVector::new(v).expect("exp samples are positive")
}

pub fn check_structure(f: &CurvatureFunction, sample_count: usize, seed: u64) -> StructureReport {
    check_structure_with(f, &StructureOptions::new(sample_count, seed))
}

pub fn check_structure_with(f: &CurvatureFunction, opts: &StructureOptions) -> StructureReport {
    let n = f.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples: Vec<ConeVector> = (0..opts.sample_count.max(1))
        .map(|_| random_cone_point(&mut rng, n, opts.sample_scale))
        .collect();
    let ev = |l: &ConeVector| f.eval(l).expect("dimension matches");

    // monotonicity
    let min_fi = samples
        .iter()
        .flat_map(|l| f.grad(l).expect("dimension matches"))
        .fold(f64::INFINITY, f64::min);
    let mono = StructureRow {
        condition: Condition::Monotonicity,
        passed: min_fi > 0.0,
        worst: min_fi,
        detail: format!("min f_i over samples = {min_fi:e}"),
    };

    // concavity on consecutive pairs
    let mut worst_gap = f64::INFINITY;
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let mid = ConeVector::new(
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
        )
        .expect("midpoint of cone points");
        let gap = ev(&mid) - 0.5 * (ev(a) + ev(b));
        worst_gap = worst_gap.min(gap);
    }
    if samples.len() < 2 {
        worst_gap = 0.0;
    }
    let conc = StructureRow {
        condition: Condition::Concavity,
        passed: worst_gap >= -opts.concavity_slack,
        worst: worst_gap,
        detail: format!("min f(mid) - mean(f) = {worst_gap:e}"),
    };

    // positivity inside, vanishing along rays to the boundary
    let min_val = samples.iter().map(ev).fold(f64::INFINITY, f64::min);
    let mut worst_ratio = 0.0_f64;
    for l in &samples {
        let (imin, _) = l
            .as_slice()
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let base = ev(l);
        let eps = *BOUNDARY_RAY.last().unwrap();
        let mut v = l.as_slice().to_vec();
        v[imin] = eps * opts.sample_scale;
        let near = ConeVector::new(v).expect("small but positive entry");
        worst_ratio = worst_ratio.max(ev(&near) / base);
    }
    let cone = StructureRow {
        condition: Condition::ConeBoundary,
        passed: min_val > 0.0 && worst_ratio <= 1e-2,
        worst: worst_ratio,
        detail: format!(
            "min f = {min_val:e}; max f(ray at {:e}) / f = {worst_ratio:e}",
            BOUNDARY_RAY[3]
        ),
    };

    let unit = ev(&ConeVector::ones(n));
    let norm = StructureRow {
        condition: Condition::Normalization,
        passed: (unit - 1.0).abs() <= 1e-12,
        worst: (unit - 1.0).abs(),
        detail: format!("f(1,...,1) = {unit}"),
    };

    let mut worst_hom = 0.0_f64;
    for l in &samples {
        let base = ev(l);
        for t in [0.5, 2.0, 10.0] {
            let scaled = l.scaled(t).expect("positive scaling");
            let rel = (ev(&scaled) - t * base).abs() / (t * base);
            worst_hom = worst_hom.max(rel);
        }
    }
    let hom = StructureRow {
        condition: Condition::Homogeneity,
        passed: worst_hom <= opts.homogeneity_tol,
        worst: worst_hom,
        detail: format!("max |f(t l) - t f(l)| / (t f(l)) = {worst_hom:e}"),
    };

    // growth probe: fixed base points in [0.5, 2]^n, last entry pushed up the ladder
    let mut growth_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut bases = vec![ConeVector::ones(n)];
    for _ in 1..GROWTH_BASE_POINTS {
        let v = (0..n).map(|_| growth_rng.random_range(0.5..2.0)).collect();
        bases.push(ConeVector::new(v).expect("positive base point"));
    }
    let mut weakest = f64::INFINITY;
    for b in &bases {
        let b = b.scaled(opts.sample_scale).expect("positive scaling");
        let best = GROWTH_LADDER
            .iter()
            .map(|r| {
                let mut v = b.as_slice().to_vec();
                v[n - 1] += r * opts.sample_scale;
                ev(&ConeVector::new(v).expect("shifted up"))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        weakest = weakest.min(best / opts.sample_scale);
    }
    let growth = StructureRow {
        condition: Condition::Growth,
        passed: weakest >= opts.growth_target,
        worst: weakest,
        detail: format!(
            "smallest ladder maximum {weakest:.6} vs target {} (ladder up to R = {:e})",
            opts.growth_target,
            GROWTH_LADDER[4]
        ),
    };

    StructureReport {
        function: f.name(),
        sample_count: samples.len(),
        seed: opts.seed,
        rows: vec![mono, conc, cone, norm, hom, growth],
    }
}
