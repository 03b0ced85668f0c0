//! Thin QR with column dropping for rank-deficient inputs.

use ndarray::{s, Array2};

use super::{TallThin, TOL_QR_DROP};

/// Result of [`thin_qr`].
///
/// `q` holds one orthonormal column per retained input column. `r` is
/// `kept.len() x cols` and upper-trapezoidal in pivot order: row `i` carries
/// the coefficients of basis vector `i` across *all* input columns, so
/// `Q R` reconstructs every column of `A`, including dropped ones (their
/// residual is below the drop tolerance by construction).
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q: TallThin,
    pub r: Array2<f64>,
    pub kept: Vec<usize>,
}

/// Modified Gram-Schmidt with one re-orthogonalization pass per column.
///
/// Columns whose trailing residual norm falls below
/// `TOL_QR_DROP * (1 + ||A||_F)` are dropped instead of producing a spurious
/// basis vector.
pub fn thin_qr(a: &TallThin) -> ThinQr {
    let rows = a.rows();
    let cols = a.cols();
    let drop_tol = TOL_QR_DROP * (1.0 + a.frob_norm());

    // Work on contiguous column buffers; column views of the row-major
    // input are strided and dominate the runtime at large dimensions.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut r = Array2::<f64>::zeros((cols, cols));
    let mut kept = Vec::with_capacity(cols);

    for j in 0..cols {
        let mut v: Vec<f64> = a.entries().column(j).iter().cloned().collect();
        let accepted = kept.len();
        // Two MGS passes keep Q^T Q = I well below the 1e-10 budget even for
        // nearly dependent inputs.
        for _pass in 0..2 {
            for (i, q) in basis.iter().take(accepted).enumerate() {
                let coeff = super::dot4(&v, q);
                r[[i, j]] += coeff;
                super::axpy_neg(&mut v, coeff, q);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < drop_tol {
            continue;
        }
        r[[accepted, j]] = norm;
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis.push(v);
        kept.push(j);
    }

    let k = kept.len();
    let mut q = Array2::<f64>::zeros((rows, k));
    for (col, b) in basis.iter().enumerate() {
        for (row, &x) in b.iter().enumerate() {
            q[[row, col]] = x;
        }
    }
    ThinQr {
        q: TallThin { data: q },
        r: r.slice(s![..k, ..]).to_owned(),
        kept,
    }
}
