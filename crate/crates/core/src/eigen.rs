//! Eigenvalues of small dense symmetric matrices by cyclic Jacobi rotations.

use nalgebra::{SMatrix, SVector};

const MAX_SWEEPS: usize = 64;

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Only the upper triangle is read. The off-diagonal mass is driven below
/// `1e-30` of the Frobenius norm squared, which puts every eigenvalue within
/// machine precision of `||A||`.
pub fn symmetric_eigenvalues<const N: usize>(m: &SMatrix<f64, N, N>) -> SVector<f64, N> {
    let mut a = [[0.0f64; N]; N];
    for i in 0..N {
        for j in i..N {
            a[i][j] = m[(i, j)];
            a[j][i] = m[(i, j)];
        }
    }
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum();
    if scale == 0.0 || !scale.is_finite() {
        let mut d = SVector::<f64, N>::from_fn(|i, _| a[i][i]);
        sort(&mut d);
        return d;
    }
    let tol = scale * 1e-30;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..N {
            for q in p + 1..N {
                off += a[p][q] * a[p][q];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p][p] -= t * apq;
                a[q][q] += t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for r in 0..N {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r][p];
                    let arq = a[r][q];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a[r][p] = np;
                    a[p][r] = np;
                    a[r][q] = nq;
                    a[q][r] = nq;
                }
            }
        }
    }
    let mut d = SVector::<f64, N>::from_fn(|i, _| a[i][i]);
    sort(&mut d);
    d
}

fn sort<const N: usize>(d: &mut SVector<f64, N>) {
    d.as_mut_slice().sort_by(|x, y| x.total_cmp(y));
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, SMatrix};
    use proptest::prelude::*;

    #[test]
    fn diagonal_and_known_spectrum() {
        let m = Matrix3::new(2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0);
        let e = symmetric_eigenvalues(&m);
        assert!((e[0] - 1.0).abs() < 1e-14);
        assert!((e[1] - 3.0).abs() < 1e-14);
        assert!((e[2] - 5.0).abs() < 1e-14);
        let z = SMatrix::<f64, 7, 7>::zeros();
        assert_eq!(symmetric_eigenvalues(&z), SVector::<f64, 7>::zeros());
    }

    proptest! {
        #[test]
        fn matches_reference_solver(v in proptest::collection::vec(-3.0..3.0f64, 49)) {
            let b = SMatrix::<f64, 7, 7>::from_iterator(v.into_iter());
            let m = b * b.transpose();
            let ours = symmetric_eigenvalues(&m);
            let mut reference: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(|x, y| x.total_cmp(y));
            let norm = m.norm();
            for (a, b) in ours.iter().zip(&reference) {
                prop_assert!((a - b).abs() <= 1e-10 * norm.max(1.0));
            }
        }
    }
}
