//! One-sided Jacobi SVD. Intended for the small core matrices arising in
//! decomposition updates; accuracy is excellent and the code stays simple.

use ndarray::{Array1, Array2};

/// Thin SVD `A = U diag(s) V^T` with singular values sorted non-increasing.
///
/// Modes with zero singular value are omitted, so `U` is `m x k`, `V` is
/// `n x k` with `k <= min(m, n)` the numerical rank.
pub fn jacobi_svd(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    if m < n {
        let (v, s, u) = jacobi_svd(&a.t().to_owned());
        return (u, s, v);
    }
    if n == 0 || a.iter().all(|&x| x == 0.0) {
        return (
            Array2::zeros((m, 0)),
            Array1::zeros(0),
            Array2::zeros((n, 0)),
        );
    }

    let mut work = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let eps = f64::EPSILON;
    // Column norms enter the rotation threshold; refresh each sweep.
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let x = work[[i, p]];
                    let y = work[[i, q]];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let x = work[[i, p]];
                    let y = work[[i, q]];
                    work[[i, p]] = c * x - s * y;
                    work[[i, q]] = s * x + c * y;
                }
                for i in 0..n {
                    let x = v[[i, p]];
                    let y = v[[i, q]];
                    v[[i, p]] = c * x - s * y;
                    v[[i, q]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut modes: Vec<(f64, usize)> = (0..n)
        .map(|j| {
            let norm = work.column(j).dot(&work.column(j)).sqrt();
            (norm, j)
        })
        .collect();
    modes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let k = modes.iter().filter(|(s, _)| *s > 0.0).count();

    let mut u = Array2::<f64>::zeros((m, k));
    let mut svals = Array1::<f64>::zeros(k);
    let mut vout = Array2::<f64>::zeros((n, k));
    for (out, &(sigma, j)) in modes.iter().take(k).enumerate() {
        svals[out] = sigma;
        u.column_mut(out).assign(&(&work.column(j) / sigma));
        vout.column_mut(out).assign(&v.column(j));
    }
    (u, svals, vout)
}
