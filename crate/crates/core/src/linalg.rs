//! Small dense matrix kernels: determinant, adjugate and singular values.
//!
//! 2×2 singular values use the closed form; larger matrices use one-sided
//! (Hestenes) Jacobi, which keeps high relative accuracy in the smallest
//! singular value.

use nalgebra::DMatrix;

pub type Matrix = DMatrix<f64>;

pub fn determinant(a: &Matrix) -> f64 {
    debug_assert!(a.is_square());
    match a.nrows() {
        0 => 1.0,
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        _ => a.clone().lu().determinant(),
    }
}

fn minor(a: &Matrix, row: usize, col: usize) -> Matrix {
    a.clone().remove_row(row).remove_column(col)
}

/// Transposed cofactor matrix, so that `A · adj A = det A · I`.
pub fn adjugate(a: &Matrix) -> Matrix {
    let n = a.nrows();
    match n {
        1 => Matrix::from_element(1, 1, 1.0),
        2 => Matrix::from_row_slice(2, 2, &[a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]]),
        _ => Matrix::from_fn(n, n, |i, j| {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * determinant(&minor(a, j, i))
        }),
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    debug_assert!(a.is_square());
    match a.nrows() {
        1 => vec![a[(0, 0)].abs()],
        2 => {
            let (s1, s2) = singular_values_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            vec![s1, s2]
        }
        _ => jacobi_singular_values(a),
    }
}

/// Closed-form singular values `(σ_max, σ_min)` of `[[a, b], [c, d]]`.
pub fn singular_values_2x2(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let q = e.hypot(h);
    let r = f.hypot(g);
    (q + r, (q - r).abs())
}

fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
    let n = a.ncols();
    let mut u = a.clone();
    let tol = f64::EPSILON;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for k in 0..n {
                    alpha += u[(k, i)] * u[(k, i)];
                    beta += u[(k, j)] * u[(k, j)];
                    gamma += u[(k, i)] * u[(k, j)];
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let ui = u[(k, i)];
                    let uj = u[(k, j)];
                    u[(k, i)] = c * ui - s * uj;
                    u[(k, j)] = s * ui + c * uj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// `(σ_max, σ_min)`.
pub fn singular_extremes(a: &Matrix) -> (f64, f64) {
    let sv = singular_values(a);
    (sv[0], *sv.last().unwrap())
}

/// Operator (spectral) norm.
pub fn operator_norm(a: &Matrix) -> f64 {
    singular_values(a)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_matrices() {
        let a = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert_eq!(determinant(&a), 6.0);
        let adj = adjugate(&a);
        assert_eq!(
            adj,
            Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 6.0]))
        );
        let sv = singular_values(&a);
        assert_relative_eq!(sv[0], 3.0, max_relative = 1e-15);
        assert_relative_eq!(sv[2], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn adjugate_times_matrix_is_det_identity() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 2.0, -1.0, 0.5, -3.0, 2.0, 4.0, 1.0, 0.25]);
        let prod = &a * adjugate(&a);
        let det = determinant(&a);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { det } else { 0.0 };
                assert!((prod[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_closed_form_matches_jacobi() {
        let a = Matrix::from_row_slice(2, 2, &[0.3, -1.7, 2.2, 0.9]);
        let closed = singular_values(&a);
        let jac = jacobi_singular_values(&a);
        assert_relative_eq!(closed[0], jac[0], max_relative = 1e-13);
        assert_relative_eq!(closed[1], jac[1], max_relative = 1e-13);
    }

    #[test]
    fn rotation_has_unit_singular_values() {
        let (s, c) = 0.7f64.sin_cos();
        let a = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let (hi, lo) = singular_extremes(&a);
        assert_relative_eq!(hi, 1.0, max_relative = 1e-15);
        assert_relative_eq!(lo, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn singular_matrix_has_zero_min() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (_, lo) = singular_extremes(&a);
        assert!(lo < 1e-15);
        assert_eq!(determinant(&a), 0.0);
    }
}
