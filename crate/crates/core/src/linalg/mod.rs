//! Dense and randomized symmetric linear algebra primitives.
//!
//! Everything downstream (online decomposition updates, maintainers, error
//! metrics) is built on three carriers: [`DenseSym`] for explicit symmetric
//! matrices, [`TallThin`] for skinny update factors, and [`LowRankSpsd`] for
//! thin eigendecompositions of symmetric positive semi-definite matrices.

mod eigen;
mod qr;
mod rsvd;
mod svd;

pub use eigen::{min_eig_check, sym_eigen_parts, symmetric_evd};
pub use qr::{thin_qr, ThinQr};
pub use rsvd::rsvd_spsd;
pub use svd::jacobi_svd;

use ndarray::{Array1, Array2};

use crate::error::{KfoError, Result};

/// Negative-eigenvalue slack allowed on PSD-tagged matrices.
pub const TOL_PSD: f64 = 1e-10;

/// Asymmetry tolerance, relative to the Frobenius norm.
pub const TOL_SYM: f64 = 1e-8;

/// Columns whose trailing residual falls below `TOL_QR_DROP * (1 + ||A||_F)`
/// are dropped during the thin QR.
pub const TOL_QR_DROP: f64 = 1e-12;

/// Explicit symmetric matrix, optionally tagged as positive semi-definite.
///
/// Entries are stored exactly symmetric: construction symmetrizes via
/// `(M + M^T) / 2` after checking the asymmetry is within [`TOL_SYM`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    data: Array2<f64>,
    psd: bool,
}

impl DenseSym {
    /// Builds a symmetric matrix from raw entries, without a PSD tag.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        Self::build(data, false)
    }

    /// Builds a symmetric matrix tagged as positive semi-definite.
    pub fn new_psd(data: Array2<f64>) -> Result<Self> {
        Self::build(data, true)
    }

    fn build(mut data: Array2<f64>, psd: bool) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols {
            return Err(KfoError::DimensionMismatch {
                op: "DenseSym::new",
                expected: "square matrix".into(),
                got: format!("{rows}x{cols}"),
            });
        }
        let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let tol = TOL_SYM * norm;
        let mut max_asym = 0.0f64;
        for i in 0..rows {
            for j in (i + 1)..cols {
                let a = data[[i, j]];
                let b = data[[j, i]];
                max_asym = max_asym.max((a - b).abs());
                let avg = 0.5 * (a + b);
                data[[i, j]] = avg;
                data[[j, i]] = avg;
            }
        }
        if max_asym > tol && norm > 0.0 {
            return Err(KfoError::NotSymmetric { max_asym, tol });
        }
        Ok(Self { data, psd })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: Array2::zeros((dim, dim)),
            psd: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Array2::eye(dim),
            psd: true,
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut data = Array2::zeros((diag.len(), diag.len()));
        for (i, v) in diag.iter().enumerate() {
            data[[i, i]] = *v;
        }
        Self { data, psd: false }
    }

    /// Gram product `M M^T`; always PSD.
    pub fn from_gram(factor: &TallThin) -> Self {
        let m = factor.entries();
        let mut data = m.dot(&m.t());
        symmetrize(&mut data);
        Self { data, psd: true }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn is_psd_tagged(&self) -> bool {
        self.psd
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    /// `self <- alpha * self + beta * other`, keeping exact symmetry.
    pub fn scale_add(&mut self, alpha: f64, other: &DenseSym, beta: f64) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(KfoError::DimensionMismatch {
                op: "DenseSym::scale_add",
                expected: format!("{}", self.dim()),
                got: format!("{}", other.dim()),
            });
        }
        self.data.zip_mut_with(&other.data, |a, &b| {
            *a = alpha * *a + beta * b;
        });
        self.psd = self.psd && other.psd && alpha >= 0.0 && beta >= 0.0;
        Ok(())
    }

    /// Entrywise difference as a plain symmetric matrix (no PSD tag).
    pub fn sub(&self, other: &DenseSym) -> Result<DenseSym> {
        if self.dim() != other.dim() {
            return Err(KfoError::DimensionMismatch {
                op: "DenseSym::sub",
                expected: format!("{}", self.dim()),
                got: format!("{}", other.dim()),
            });
        }
        Ok(DenseSym {
            data: &self.data - &other.data,
            psd: false,
        })
    }
}

/// Tall-and-thin real matrix: `cols <= rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct TallThin {
    data: Array2<f64>,
}

impl TallThin {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if cols > rows {
            return Err(KfoError::DimensionMismatch {
                op: "TallThin::new",
                expected: format!("cols <= rows = {rows}"),
                got: format!("cols = {cols}"),
            });
        }
        Ok(Self { data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.data
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
        }
    }
}

/// Thin eigendecomposition `U diag(D) U^T` of a symmetric PSD matrix.
///
/// `U` has orthonormal columns and `D` is nonnegative and non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSpsd {
    dim: usize,
    basis: Array2<f64>,
    eigvals: Array1<f64>,
}

impl LowRankSpsd {
    /// Validating constructor; checks orthonormality, ordering and signs.
    pub fn new(basis: Array2<f64>, eigvals: Array1<f64>) -> Result<Self> {
        let (dim, rank) = basis.dim();
        if rank > dim {
            return Err(KfoError::DimensionMismatch {
                op: "LowRankSpsd::new",
                expected: format!("rank <= dim = {dim}"),
                got: format!("rank = {rank}"),
            });
        }
        if eigvals.len() != rank {
            return Err(KfoError::DimensionMismatch {
                op: "LowRankSpsd::new",
                expected: format!("{rank} eigenvalues"),
                got: format!("{}", eigvals.len()),
            });
        }
        let gram = basis.t().dot(&basis);
        for i in 0..rank {
            for j in 0..rank {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - expect).abs() > 1e-9 {
                    return Err(KfoError::InvalidConfig {
                        field: "basis",
                        reason: format!(
                            "columns not orthonormal: (U^T U)[{i},{j}] = {}",
                            gram[[i, j]]
                        ),
                    });
                }
            }
        }
        for i in 0..rank {
            if eigvals[i] < 0.0 {
                return Err(KfoError::InvalidConfig {
                    field: "eigvals",
                    reason: format!("negative eigenvalue {} at {i}", eigvals[i]),
                });
            }
            if i + 1 < rank && eigvals[i] < eigvals[i + 1] {
                return Err(KfoError::InvalidConfig {
                    field: "eigvals",
                    reason: format!("not sorted non-increasing at {i}"),
                });
            }
        }
        Ok(Self {
            dim,
            basis,
            eigvals,
        })
    }

    /// Fast path for internally produced factors; invariants checked in debug.
    pub(crate) fn from_parts_unchecked(basis: Array2<f64>, eigvals: Array1<f64>) -> Self {
        debug_assert_eq!(basis.ncols(), eigvals.len());
        debug_assert!(eigvals.windows(2).into_iter().all(|w| w[0] >= w[1]));
        debug_assert!(eigvals.iter().all(|&v| v >= 0.0));
        Self {
            dim: basis.nrows(),
            basis,
            eigvals,
        }
    }

    /// Rank-zero representation of the zero matrix.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            basis: Array2::zeros((dim, 0)),
            eigvals: Array1::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn eigvals(&self) -> &Array1<f64> {
        &self.eigvals
    }

    /// Largest stored eigenvalue, 0 for the rank-zero representation.
    pub fn max_eig(&self) -> f64 {
        self.eigvals.first().copied().unwrap_or(0.0)
    }

    /// Smallest stored eigenvalue, 0 for the rank-zero representation.
    pub fn min_eig(&self) -> f64 {
        self.eigvals.last().copied().unwrap_or(0.0)
    }

    /// Frobenius norm from the spectrum alone, without densifying.
    pub fn frob_norm(&self) -> f64 {
        self.eigvals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales the represented matrix by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        Self {
            dim: self.dim,
            basis: self.basis.clone(),
            eigvals: &self.eigvals * factor,
        }
    }

    /// Reconstructs the dense matrix `U diag(D) U^T`.
    pub fn densify(&self) -> DenseSym {
        let mut scaled = self.basis.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            col *= self.eigvals[j];
        }
        let mut data = scaled.dot(&self.basis.t());
        symmetrize(&mut data);
        DenseSym { data, psd: true }
    }
}

/// Keeps the leading `r` modes (eigenvalues are already sorted); stable.
pub fn truncate(rep: &LowRankSpsd, r: usize) -> LowRankSpsd {
    let keep = r.min(rep.rank());
    LowRankSpsd {
        dim: rep.dim,
        basis: rep.basis.slice(ndarray::s![.., ..keep]).to_owned(),
        eigvals: rep.eigvals.slice(ndarray::s![..keep]).to_owned(),
    }
}

/// Principal angles (radians) between the column spans of `u1` and `u2`.
///
/// Both inputs must have orthonormal columns. Cosines come from the singular
/// values of `U1^T U2` and sines from those of `(I - U1 U1^T) U2`, so small
/// angles keep full precision instead of degrading through `acos` near 1.
pub fn principal_angles(u1: &Array2<f64>, u2: &Array2<f64>) -> Array1<f64> {
    let cross = u1.t().dot(u2);
    let (_, cosines, _) = jacobi_svd(&cross);
    let resid = u2 - &u1.dot(&cross);
    let (_, sines_desc, _) = jacobi_svd(&resid);
    let k = cosines.len();
    // The residual has one singular value per column of u2: the k principal
    // sines plus, when u2 spans more directions than u1, extra unit values.
    // Pad dropped zero singular values, then pair the i-th cosine (angles
    // ascending) with the i-th smallest sine.
    let total = u2.ncols();
    let mut sines = vec![0.0f64; total];
    for (i, &s) in sines_desc.iter().take(total).enumerate() {
        sines[i] = s;
    }
    Array1::from_iter((0..k).map(|i| sines[total - 1 - i].atan2(cosines[i].clamp(-1.0, 1.0))))
}

/// Solves `A X = B` by LU with partial pivoting. Independent of the
/// eigen-based inverse application; used as a dense oracle.
pub fn solve_linear_system(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(KfoError::DimensionMismatch {
            op: "solve_linear_system",
            expected: format!("A {n}x{n}, B {n}xk"),
            got: format!(
                "A {}x{}, B {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            ),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[[k, k]].abs();
        for i in (k + 1)..n {
            if lu[[i, k]].abs() > best {
                best = lu[[i, k]].abs();
                p = i;
            }
        }
        if best == 0.0 {
            return Err(KfoError::InvalidConfig {
                field: "matrix",
                reason: "singular system in solve_linear_system".into(),
            });
        }
        if p != k {
            piv.swap(p, k);
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [p, j]);
            }
        }
        for i in (k + 1)..n {
            let factor = lu[[i, k]] / lu[[k, k]];
            lu[[i, k]] = factor;
            for j in (k + 1)..n {
                lu[[i, j]] -= factor * lu[[k, j]];
            }
            for j in 0..x.ncols() {
                x[[i, j]] -= factor * x[[k, j]];
            }
        }
    }
    for j in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut sum = x[[i, j]];
            for k in (i + 1)..n {
                sum -= lu[[i, k]] * x[[k, j]];
            }
            x[[i, j]] = sum / lu[[i, i]];
        }
    }
    Ok(x)
}

/// Four-lane dot product; split accumulators let the reduction vectorize.
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0f64; 4];
    let chunks = len / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..len {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// `y -= alpha * x` over matching slices.
pub(crate) fn axpy_neg(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi -= alpha * xi;
    }
}

/// Forces exact bitwise symmetry after a numerically symmetric product.
pub(crate) fn symmetrize(data: &mut Array2<f64>) {
    let n = data.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (data[[i, j]] + data[[j, i]]);
            data[[i, j]] = avg;
            data[[j, i]] = avg;
        }
    }
}
