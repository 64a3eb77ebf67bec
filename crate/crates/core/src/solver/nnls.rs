use nalgebra::{DMatrix, DVector};

/// Lawson-Hanson active-set solver for `min ||A x - b||` subject to `x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = a.shape();
    let mut x = DVector::zeros(cols);
    if cols == 0 {
        return x;
    }
    let tol = 10.0 * f64::EPSILON * a.amax().max(f64::MIN_POSITIVE) * rows.max(cols) as f64 * b.amax().max(1.0);
    let mut passive = vec![false; cols];
    let max_outer = 3 * cols + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..max_outer {
            let idx: Vec<usize> = (0..cols).filter(|&k| passive[k]).collect();
            let s = least_squares(a, b, &idx);
            if idx.iter().zip(s.iter()).all(|(_, &v)| v > 0.0) {
                x.fill(0.0);
                for (&k, &v) in idx.iter().zip(s.iter()) {
                    x[k] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&k, &v) in idx.iter().zip(s.iter()) {
                if v <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - v));
                }
            }
            let mut full = DVector::zeros(cols);
            for (&k, &v) in idx.iter().zip(s.iter()) {
                full[k] = v;
            }
            x += (full - &x) * alpha;
            for &k in &idx {
                if x[k] <= tol {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
    x
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, k| a[(i, idx[k])]);
    sub.svd(true, true)
        .solve(b, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(idx.len()))
}
