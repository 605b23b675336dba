//! Lawson–Hanson nonnegative least squares.

use crate::linalg::{lstsq_min_norm, pinv, RankTolerance};
use crate::{Matrix, Vector};

/// `argmin_{z ≥ 0} ‖a z − b‖`.
pub fn nnls(a: &Matrix, b: &Vector) -> Vector {
    let n = a.ncols();
    let mut x = Vector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = 1.0 + a.abs().max() * (1.0 + b.abs().max());
    let tol = 1e-13 * scale;
    let mut passive = vec![false; n];
    let tol_rank = RankTolerance::new(1e-12, 0.0).expect("valid tolerance");

    let solve_passive = |passive: &[bool]| -> Vector {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut sub = Matrix::zeros(a.nrows(), idx.len());
        for (k, &j) in idx.iter().enumerate() {
            sub.column_mut(k).copy_from(&a.column(j));
        }
        let sol = lstsq_min_norm(&sub, b, tol_rank).unwrap_or_else(|_| Vector::zeros(idx.len()));
        let mut full = Vector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };

    for _outer in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = cand else { break };
        if w[t] <= tol {
            break;
        }
        passive[t] = true;
        for _inner in 0..(3 * n + 10) {
            let s = solve_passive(&passive);
            let bad: Vec<usize> = (0..n).filter(|&j| passive[j] && s[j] <= 0.0).collect();
            if bad.is_empty() {
                x = s;
                break;
            }
            let mut alpha: f64 = 1.0;
            for &j in &bad {
                let denom = x[j] - s[j];
                if denom > 0.0 {
                    alpha = alpha.min(x[j] / denom);
                }
            }
            x = &x + (s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// `argmin ‖f y + a z − b‖` over free `y` and `z ≥ 0`.
///
/// The free block is projected out, the nonnegative block solved by
/// [`nnls`], and `y` recovered by least squares.
pub fn nnls_with_free(f: &Matrix, a: &Matrix, b: &Vector) -> (Vector, Vector) {
    if f.ncols() == 0 {
        return (Vector::zeros(0), nnls(a, b));
    }
    let fp = pinv(f).expect("finite matrix");
    let proj = Matrix::identity(f.nrows(), f.nrows()) - f * &fp;
    let z = nnls(&(&proj * a), &(&proj * b));
    let y = fp * (b - a * &z);
    (y, z)
}
