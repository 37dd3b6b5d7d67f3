use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.col_vec(i)
    }

    /// V·diag(λ)·Vᵀ
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            for i in 0..n {
                let vik = self.eigenvectors[(i, k)] * lam;
                for j in 0..n {
                    out[(i, j)] += vik * self.eigenvectors[(j, k)];
                }
            }
        }
        out
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized first. Sweeps run in fixed (p, q) order until the
/// off-diagonal Frobenius norm drops below 1e-12·‖S‖_F. Each eigenvector is
/// signed so that its largest-magnitude entry is positive; ties go to the
/// lowest index.
pub fn sym_eigen(s: &Matrix) -> Result<EigenDecomposition> {
    if !s.is_square() {
        return Err(Error::Input(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let n = s.rows();
    let mut a = s.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();

    if scale > 0.0 {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            if off_diagonal_norm(&a) < REL_TOL * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
        if !converged {
            let residual = off_diagonal_norm(&a) / scale;
            if residual >= REL_TOL {
                return Err(Error::Convergence {
                    what: "Jacobi eigendecomposition",
                    iterations: MAX_SWEEPS,
                    residual,
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their sweep order
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));

    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.col_vec(src);
        fix_sign(&mut col);
        for i in 0..n {
            eigenvectors[(i, dst)] = col[i];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows();
    let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn fix_sign(col: &mut [f64]) {
    let max = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let lead = col
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    if col[lead] < 0.0 {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn diagonal_input() {
        let e = sym_eigen(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.vector(0), vec![1.0, 0.0]);
        assert_eq!(e.vector(1), vec![0.0, 1.0]);
    }

    #[test]
    fn diagonal_input_is_reordered_descending() {
        let e = sym_eigen(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0]);
    }

    #[test]
    fn identity_three() {
        let e = sym_eigen(&Matrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        assert_eq!(e.eigenvectors, Matrix::identity(3));
    }

    #[test]
    fn two_by_two_coupled() {
        // characteristic polynomial (2-λ)² - 1 = 0 → λ = 3, 1
        let s = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigen(&s).unwrap();
        assert!(close(&e.eigenvalues, &[3.0, 1.0], 1e-14));
        assert!(close(&e.vector(0), &[FRAC_1_SQRT_2, FRAC_1_SQRT_2], 1e-14));
        assert!(close(&e.vector(1), &[FRAC_1_SQRT_2, -FRAC_1_SQRT_2], 1e-14));
    }

    #[test]
    fn zero_matrix() {
        let e = sym_eigen(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(e.eigenvalues, vec![0.0, 0.0]);
        assert_eq!(e.eigenvectors, Matrix::identity(2));
    }

    #[test]
    fn rejects_non_finite() {
        let s = Matrix::from_rows(&[[1.0, f64::NAN], [f64::NAN, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&s), Err(Error::Input(_))));
    }

    #[test]
    fn random_symmetric_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = 1 + trial % 6;
            let mut s = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    s[(i, j)] = rng.random_range(-1.0..1.0);
                }
            }
            let s = s.symmetrized();
            let e = sym_eigen(&s).unwrap();
            let rel = (&e.reconstruct() - &s).frobenius_norm() / s.frobenius_norm();
            assert!(rel < 1e-9, "trial {trial}: reconstruction {rel:e}");
            let vtv = &e.eigenvectors.transpose() * &e.eigenvectors;
            assert!((&vtv - &Matrix::identity(n)).frobenius_norm() < 1e-9);
            assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_sign_normalized(entries in prop::collection::vec(-1.0f64..1.0, 9)) {
            let s = Matrix::from_rows(&[&entries[0..3], &entries[3..6], &entries[6..9]]).unwrap();
            let a = sym_eigen(&s).unwrap();
            let b = sym_eigen(&s).unwrap();
            prop_assert_eq!(&a, &b);
            for k in 0..3 {
                let v = a.vector(k);
                let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let lead = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-12)).unwrap();
                prop_assert!(v[lead] > 0.0);
            }
        }
    }
}
