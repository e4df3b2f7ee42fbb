//! Small dense symmetric eigenproblems.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition `A = V diag(values) V^T` with values ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self, diag: &[f64]) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        &self.vectors * d * self.vectors.transpose()
    }
}

pub fn symmetric_eigen(a: &DMatrix<f64>) -> SymEigen {
    assert!(a.is_square(), "eigenproblem needs a square matrix");
    match a.nrows() {
        1 => SymEigen {
            values: DVector::from_element(1, a[(0, 0)]),
            vectors: DMatrix::identity(1, 1),
        },
        2 => eigen2(a[(0, 0)], 0.5 * (a[(0, 1)] + a[(1, 0)]), a[(1, 1)]),
        _ => jacobi(a),
    }
}

fn eigen2(a: f64, b: f64, c: f64) -> SymEigen {
    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    // rotation angle of the eigenvector belonging to the larger eigenvalue
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = phi.sin_cos();
    let values = DVector::from_vec(vec![mean - radius, mean + radius]);
    let vectors = DMatrix::from_row_slice(2, 2, &[-s, co, co, s]);
    SymEigen { values, vectors }
}

/// Cyclic Jacobi rotations; ties in the final sort keep the original order.
fn jacobi(a: &DMatrix<f64>) -> SymEigen {
    let n = a.nrows();
    let mut m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= 1e-17 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    SymEigen {
        values: DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)])),
        vectors: DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b + b.transpose()
    }

    fn check(a: &DMatrix<f64>, e: &SymEigen) {
        let n = a.nrows();
        let scale = a.norm().max(1.0);
        let rec = e.reconstruct(e.values.as_slice());
        assert!((rec - a).norm() < 1e-12 * scale);
        let id = e.vectors.transpose() * &e.vectors;
        assert!((id - DMatrix::identity(n, n)).norm() < 1e-12);
        for i in 1..n {
            assert!(e.values[i - 1] <= e.values[i]);
        }
    }

    #[test]
    fn diagonal_and_small_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let e = symmetric_eigen(&a);
        assert_eq!(e.values.as_slice(), &[-1.0, 2.0, 3.0]);

        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigen(&b);
        assert!((e.values[0] - 1.0).abs() < 1e-15 && (e.values[1] - 3.0).abs() < 1e-15);
        check(&b, &e);
    }

    #[test]
    fn rotation_invariance() {
        for k in 0..12 {
            let t = 0.37 * k as f64;
            let (s, c) = f64::sin_cos(t);
            let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
            let a = &q * d * q.transpose();
            let e = symmetric_eigen(&a);
            assert!((e.values[0] - 1.0).abs() < 1e-12);
            assert!((e.values[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_matrices_up_to_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=8 {
            for _ in 0..25 {
                let a = random_sym(&mut rng, n);
                check(&a, &symmetric_eigen(&a));
            }
        }
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = DMatrix::<f64>::identity(4, 4) * 2.5;
        let e = symmetric_eigen(&a);
        assert!(e.values.iter().all(|v| (v - 2.5).abs() < 1e-15));
        check(&a, &e);
    }
}
