use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;

/// Ratio of extreme singular values (∞ for a rank-deficient matrix).
pub fn condition_number(a: &CMat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(a: &CMat, tol: f64) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// Least-squares solution of `a x = b` and the relative residual ‖ax − b‖/‖b‖.
pub fn lstsq(a: &CMat, b: &CMat) -> (CMat, f64) {
    let svd = a.clone().svd(true, true);
    let x = svd.solve(b, 1e-300).expect("svd computed with u and v");
    let res = (a * &x - b).norm() / b.norm().max(f64::MIN_POSITIVE);
    (x, res)
}

/// ‖a − b‖ / ‖a‖ in the Frobenius norm.
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    let n = a.norm();
    if n == 0.0 {
        b.norm()
    } else {
        (a - b).norm() / n
    }
}

pub fn diag(d: &[C64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_column_slice(d))
}
