//! Symmetric eigendecomposition: Householder tridiagonalization followed by
//! implicit-shift QL, the classic EISPACK tred2/tql2 pair. The kernels run
//! on flat buffers and keep the accumulated transform transposed so the hot
//! loops stream contiguous rows; this sits on the critical path of every
//! online update (core matrices) and every dense oracle.

use ndarray::{Array1, Array2};

use super::{DenseSym, LowRankSpsd, TOL_PSD};
use crate::error::{KfoError, Result};

/// Raw eigendecomposition of a symmetric matrix.
///
/// Returns all eigenpairs sorted by non-increasing eigenvalue, with no sign
/// clamping. The reconstruction `Z diag(vals) Z^T` matches the input to
/// machine-level accuracy.
pub fn sym_eigen_parts(m: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let mut z: Vec<f64> = m.iter().cloned().collect();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    let mut qt = vec![0.0f64; n * n];
    tred2(&mut z, n, &mut d, &mut e, &mut qt);
    tql2(&mut d, &mut e, &mut qt, n)?;

    // Sort descending; row `i` of `qt` is eigenvector `i`.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vecs = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            vecs[[row, new_col]] = qt[old_col * n + row];
        }
    }
    Ok((vals, vecs))
}

/// Full eigendecomposition of a symmetric matrix as a [`LowRankSpsd`].
///
/// Eigenvalues in `[-TOL_PSD * scale, 0)` are clamped to zero, where
/// `scale = 1 + |largest eigenvalue|`. Anything more negative cannot be
/// represented by the PSD carrier and is reported as indefinite.
pub fn symmetric_evd(m: &DenseSym) -> Result<LowRankSpsd> {
    let (mut vals, vecs) = sym_eigen_parts(m.entries())?;
    let scale = 1.0 + vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = TOL_PSD * scale;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            if *v < -tol {
                return Err(KfoError::IndefiniteInput {
                    eigenvalue: *v,
                    tol,
                });
            }
            *v = 0.0;
        }
    }
    Ok(LowRankSpsd::from_parts_unchecked(vecs, vals))
}

/// Exact smallest eigenvalue of a symmetric matrix (may be negative).
pub fn min_eig_check(m: &DenseSym) -> Result<f64> {
    let (vals, _) = sym_eigen_parts(m.entries())?;
    Ok(vals.last().copied().unwrap_or(0.0))
}

/// Householder reduction to tridiagonal form. `z` is row-major `n x n` and
/// is consumed as workspace: row `i` keeps the scaled reflector `u_i`. On
/// exit `d` holds the tridiagonal diagonal, `e[1..]` the subdiagonal, and
/// `qt` the accumulated orthogonal transform, TRANSPOSED (row `c` of `qt` is
/// column `c` of Q).
fn tred2(z: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64], qt: &mut [f64]) {
    // `hs[i]` is the reflector normalization H_i; zero means "no transform".
    let mut hs = vec![0.0f64; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let row_i = i * n;
            let mut scale = 0.0;
            for k in 0..=l {
                scale += z[row_i + k].abs();
            }
            if scale == 0.0 {
                e[i] = z[row_i + l];
            } else {
                for k in 0..=l {
                    z[row_i + k] /= scale;
                    h += z[row_i + k] * z[row_i + k];
                }
                let f = z[row_i + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[row_i + l] = f - g;
                // Apply the reflector symmetrically to the active block,
                // using e[0..=l] as the workspace vector p of the classic
                // formulation.
                let mut f_acc = 0.0;
                for j in 0..=l {
                    let row_j = j * n;
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += z[row_j + k] * z[row_i + k];
                    }
                    for k in (j + 1)..=l {
                        g += z[k * n + j] * z[row_i + k];
                    }
                    e[j] = g / h;
                    f_acc += e[j] * z[row_i + j];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = z[row_i + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    let row_j = j * n;
                    for k in 0..=j {
                        z[row_j + k] -= f * e[k] + g * z[row_i + k];
                    }
                }
            }
        } else {
            e[i] = z[i * n + l];
        }
        d[i] = h;
        hs[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;

    // Accumulate Q = P_{n-1} ... P_1 applied to the identity, kept
    // transposed: every inner pass is a contiguous dot/axpy over row `j`.
    for x in qt.iter_mut() {
        *x = 0.0;
    }
    for c in 0..n {
        qt[c * n + c] = 1.0;
    }
    for i in 1..n {
        if hs[i] == 0.0 {
            continue;
        }
        let inv_h = 1.0 / hs[i];
        let u = &z[i * n..i * n + i];
        for j in 0..i {
            let q_row = &mut qt[j * n..j * n + i];
            let g = super::dot4(u, q_row) * inv_h;
            super::axpy_neg(q_row, g, u);
        }
    }
    // The reduced matrix's diagonal lives on the worked-over block.
    for i in 0..n {
        d[i] = z[i * n + i];
    }
}

/// Implicit-shift QL iteration on the tridiagonal matrix, rotating the
/// accumulated transform into the eigenvector matrix. `z` holds the
/// transform TRANSPOSED (row `i` is eigenvector `i` in progress), so each
/// rotation streams over two contiguous rows.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<()> {
    if n <= 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(KfoError::EigenNoConvergence { row: l });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // Rotate eigenvector rows i and i+1 in one contiguous pass.
                let (lo, hi) = z.split_at_mut((i + 1) * n);
                let row_i = &mut lo[i * n..];
                let row_i1 = &mut hi[..n];
                for (a, bq) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                    let f = *bq;
                    *bq = s * *a + c * f;
                    *a = c * *a - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
