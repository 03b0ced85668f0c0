//! Exact online low-rank decomposition updates.
//!
//! Given the thin SVD of `X` and a low-rank additive update `A B^T`, the
//! updated decomposition is recovered exactly from a small core matrix
//!
//! ```text
//! M_S = [I  U^T A] [D  0] [I  V^T B]^T
//!       [0    R_A] [0  I] [0    R_B]
//! ```
//!
//! where `Q_A R_A` / `Q_B R_B` are thin QR factorizations of the components
//! of `A` / `B` orthogonal to the current bases. Only `M_S` (whose side is
//! the small `rank + n`) is ever decomposed from scratch, so the update costs
//! `O((r+n)^4 + d (r+n)^2)` instead of a dense decomposition.

use ndarray::{s, Array1, Array2};

use crate::error::{KfoError, Result};
use crate::linalg::{jacobi_svd, symmetrize, thin_qr, DenseSym, LowRankSpsd, TallThin};

/// Relative threshold below which post-update singular values are pruned.
pub const TOL_PRUNE: f64 = 1e-12;

/// Thin SVD `U diag(D) V^T` of a general low-rank matrix.
#[derive(Debug, Clone)]
pub struct GeneralLowRank {
    u: Array2<f64>,
    d: Array1<f64>,
    v: Array2<f64>,
}

impl GeneralLowRank {
    pub fn new(u: Array2<f64>, d: Array1<f64>, v: Array2<f64>) -> Result<Self> {
        if u.ncols() != d.len() || v.ncols() != d.len() {
            return Err(KfoError::DimensionMismatch {
                op: "GeneralLowRank::new",
                expected: format!("{} singular values", u.ncols()),
                got: format!("d: {}, v cols: {}", d.len(), v.ncols()),
            });
        }
        Ok(Self { u, d, v })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            u: Array2::zeros((rows, 0)),
            d: Array1::zeros(0),
            v: Array2::zeros((cols, 0)),
        }
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn left_basis(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.d
    }

    pub fn right_basis(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn densify(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.columns_mut().into_iter().enumerate() {
            col *= self.d[j];
        }
        us.dot(&self.v.t())
    }
}

/// Assembles the small core matrix coupling the old spectrum with the update.
///
/// `ua` = `U^T A` (`r x n`), `vb` = `V^T B` (`r x n`), `ra` / `rb` are the
/// (possibly trapezoidal, `n_a x n` / `n_b x n`) QR factors of the orthogonal
/// components, and `d` is the current spectrum. The result is
/// `(r + n_a) x (r + n_b)`; blocks shrink when QR dropped columns.
pub fn assemble_core(
    ua: &Array2<f64>,
    vb: &Array2<f64>,
    ra: &Array2<f64>,
    rb: &Array2<f64>,
    d: &Array1<f64>,
) -> Result<Array2<f64>> {
    let r = d.len();
    let n = ua.ncols();
    if vb.ncols() != n || ra.ncols() != n || rb.ncols() != n || ua.nrows() != r || vb.nrows() != r {
        return Err(KfoError::DimensionMismatch {
            op: "assemble_core",
            expected: format!("U^T A, V^T B: {r}x{n}; R_A, R_B: *x{n}"),
            got: format!(
                "ua {}x{}, vb {}x{}, ra {}x{}, rb {}x{}",
                ua.nrows(),
                ua.ncols(),
                vb.nrows(),
                vb.ncols(),
                ra.nrows(),
                ra.ncols(),
                rb.nrows(),
                rb.ncols()
            ),
        });
    }
    let na = ra.nrows();
    let nb = rb.nrows();

    // Left factor L = [[I, ua], [0, ra]] (r+na) x (r+n), scaled by diag(D, I).
    let mut left = Array2::<f64>::zeros((r + na, r + n));
    for i in 0..r {
        left[[i, i]] = d[i];
    }
    for i in 0..r {
        for j in 0..n {
            left[[i, r + j]] = ua[[i, j]];
        }
    }
    for i in 0..na {
        for j in 0..n {
            left[[r + i, r + j]] = ra[[i, j]];
        }
    }
    // Right factor is the transpose of [[I, vb], [0, rb]].
    let mut right = Array2::<f64>::zeros((r + n, r + nb));
    for i in 0..r {
        right[[i, i]] = 1.0;
    }
    for j in 0..n {
        for i in 0..r {
            right[[r + j, i]] = vb[[i, j]];
        }
        for i in 0..nb {
            right[[r + j, r + i]] = rb[[i, j]];
        }
    }
    Ok(left.dot(&right))
}

/// Exact SVD of `X + A B^T` from the thin SVD of `X`.
pub fn brand_update(x: &GeneralLowRank, a: &TallThin, b: &TallThin) -> Result<GeneralLowRank> {
    let (m, d_cols) = (x.rows(), x.cols());
    let n = a.cols();
    if a.rows() != m || b.rows() != d_cols || b.cols() != n {
        return Err(KfoError::DimensionMismatch {
            op: "brand_update",
            expected: format!("A: {m}x{n}, B: {d_cols}x{n}"),
            got: format!("A: {}x{}, B: {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let limit = m.min(d_cols);
    if x.rank() + n >= limit {
        return Err(KfoError::RankBudgetExceeded {
            combined: x.rank() + n,
            limit,
        });
    }

    let ua = x.u.t().dot(a.entries());
    let vb = x.v.t().dot(b.entries());
    let a_perp = a.entries() - &x.u.dot(&ua);
    let b_perp = b.entries() - &x.v.dot(&vb);
    let qa = thin_qr(&TallThin::new(a_perp)?);
    let qb = thin_qr(&TallThin::new(b_perp)?);

    let core = assemble_core(&ua, &vb, &qa.r, &qb.r, &x.d)?;
    let (cu, cs, cv) = jacobi_svd(&core);

    // Prune relative to the leading singular value.
    let cutoff = cs.first().copied().unwrap_or(0.0) * TOL_PRUNE;
    let keep = cs.iter().take_while(|&&v| v > cutoff).count();

    let left_frame = hstack(&x.u, qa.q.entries());
    let right_frame = hstack(&x.v, qb.q.entries());
    let u_new = left_frame.dot(&cu.slice(s![.., ..keep]));
    let v_new = right_frame.dot(&cv.slice(s![.., ..keep]));
    Ok(GeneralLowRank {
        u: u_new,
        d: cs.slice(s![..keep]).to_owned(),
        v: v_new,
    })
}

/// Exact eigendecomposition of `U diag(D) U^T + A A^T`.
///
/// The symmetric specialization of [`brand_update`]: one projection, one QR,
/// and a small symmetric EVD. Any scaling (for exponential averaging, pass
/// `rho * D` and `sqrt(1 - rho) * A`) is the caller's job.
pub fn symmetric_brand(rep: &LowRankSpsd, update: &TallThin) -> Result<LowRankSpsd> {
    let d = rep.dim();
    let n = update.cols();
    if update.rows() != d {
        return Err(KfoError::DimensionMismatch {
            op: "symmetric_brand",
            expected: format!("update with {d} rows"),
            got: format!("{} rows", update.rows()),
        });
    }
    if rep.rank() + n >= d {
        return Err(KfoError::RankBudgetExceeded {
            combined: rep.rank() + n,
            limit: d,
        });
    }

    let u = rep.basis();
    let ua = u.t().dot(update.entries());
    let a_perp = update.entries() - &u.dot(&ua);
    let qa = thin_qr(&TallThin::new(a_perp)?);

    let mut core = assemble_core(&ua, &ua, &qa.r, &qa.r, rep.eigvals())?;
    symmetrize(&mut core);
    // The core shares the update's spectrum, hence PSD up to roundoff.
    let core_rep = crate::linalg::symmetric_evd(&DenseSym::new_psd(core)?)?;

    let cutoff = core_rep.max_eig() * TOL_PRUNE;
    let keep = core_rep
        .eigvals()
        .iter()
        .take_while(|&&v| v > cutoff)
        .count();

    let frame = hstack(u, qa.q.entries());
    let basis = frame.dot(&core_rep.basis().slice(s![.., ..keep]));
    let eigvals = core_rep.eigvals().slice(s![..keep]).to_owned();
    Ok(LowRankSpsd::from_parts_unchecked(basis, eigvals))
}

fn hstack(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let rows = a.nrows();
    let mut out = Array2::zeros((rows, a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{principal_angles, sym_eigen_parts, symmetric_evd, truncate};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                out[[i, j]] = StandardNormal.sample(&mut rng);
            }
        }
        out
    }

    fn random_lowrank(d: usize, r: usize, seed: u64) -> LowRankSpsd {
        let g = gaussian(d, r, seed);
        let m = DenseSym::from_gram(&TallThin::new(g).unwrap());
        truncate(&symmetric_evd(&m).unwrap(), r)
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn core_with_zero_update_is_padded_spectrum() {
        // A = B = 0 passed with explicit zero R blocks: diag(2,1) plus a
        // zero padded block.
        let d = Array1::from_vec(vec![2.0, 1.0]);
        let ua = Array2::zeros((2, 1));
        let ra = Array2::zeros((1, 1));
        let core = assemble_core(&ua, &ua, &ra, &ra, &d).unwrap();
        assert_eq!(core.dim(), (3, 3));
        assert_eq!(core[[0, 0]], 2.0);
        assert_eq!(core[[1, 1]], 1.0);
        assert_eq!(core[[2, 2]], 0.0);
        assert_eq!(core.iter().map(|v| v.abs()).sum::<f64>(), 3.0);
    }

    #[test]
    fn core_with_empty_spectrum_is_r_product() {
        // r = 0, single unit column: M_S = R_A R_B^T = (1).
        let d = Array1::zeros(0);
        let ua = Array2::zeros((0, 1));
        let ra = array![[1.0]];
        let core = assemble_core(&ua, &ua, &ra, &ra, &d).unwrap();
        assert_eq!(core.dim(), (1, 1));
        assert!((core[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn core_reconstruction_oracle() {
        // Densified check: [U Q_A] M_S [V Q_B]^T == X + A B^T entrywise.
        let m = 14;
        let d_cols = 12;
        let r = 3;
        let n = 2;
        let x = {
            let u = thin_qr(&TallThin::new(gaussian(m, r, 1)).unwrap())
                .q
                .into_entries();
            let v = thin_qr(&TallThin::new(gaussian(d_cols, r, 2)).unwrap())
                .q
                .into_entries();
            let mut d = Array1::from_vec(vec![3.0, 2.0, 1.0]);
            d *= 1.0;
            GeneralLowRank::new(u, d, v).unwrap()
        };
        let a = TallThin::new(gaussian(m, n, 3)).unwrap();
        let b = TallThin::new(gaussian(d_cols, n, 4)).unwrap();

        let ua = x.u.t().dot(a.entries());
        let vb = x.v.t().dot(b.entries());
        let qa = thin_qr(&TallThin::new(a.entries() - &x.u.dot(&ua)).unwrap());
        let qb = thin_qr(&TallThin::new(b.entries() - &x.v.dot(&vb)).unwrap());
        let core = assemble_core(&ua, &vb, &qa.r, &qb.r, &x.d).unwrap();

        let left = hstack(&x.u, qa.q.entries());
        let right = hstack(&x.v, qb.q.entries());
        let recon = left.dot(&core.dot(&right.t()));
        let target = x.densify() + &a.entries().dot(&b.entries().t());
        assert!(max_abs(&(&recon - &target)) < 1e-10);
    }

    #[test]
    fn brand_zero_update_preserves_x() {
        let x = {
            let u = thin_qr(&TallThin::new(gaussian(10, 3, 5)).unwrap())
                .q
                .into_entries();
            let v = thin_qr(&TallThin::new(gaussian(9, 3, 6)).unwrap())
                .q
                .into_entries();
            GeneralLowRank::new(u, Array1::from_vec(vec![5.0, 3.0, 1.0]), v).unwrap()
        };
        let a = TallThin::zeros(10, 2).unwrap();
        let b = TallThin::zeros(9, 2).unwrap();
        let updated = brand_update(&x, &a, &b).unwrap();
        assert_eq!(updated.rank(), 3);
        for (got, want) in updated.d.iter().zip(x.d.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(max_abs(&(&updated.densify() - &x.densify())) < 1e-12);
    }

    #[test]
    fn brand_from_zero_is_gram_svd() {
        let a = TallThin::new(gaussian(12, 3, 7)).unwrap();
        let x = GeneralLowRank::zero(12, 12);
        let updated = brand_update(&x, &a, &a).unwrap();
        // Oracle: dense SVD of A A^T via the symmetric eigensolver.
        let gram = DenseSym::from_gram(&a);
        let (vals, _) = sym_eigen_parts(gram.entries()).unwrap();
        for (got, want) in updated.d.iter().zip(vals.iter()) {
            assert!((got - want).abs() < 1e-9 * (1.0 + want));
        }
        assert!(max_abs(&(&updated.densify() - gram.entries())) < 1e-9 * (1.0 + gram.frob_norm()));
    }

    #[test]
    fn brand_random_case_matches_dense_oracle() {
        let m = 24;
        let d_cols = 20;
        let r = 4;
        let n = 2;
        let x = {
            let u = thin_qr(&TallThin::new(gaussian(m, r, 8)).unwrap())
                .q
                .into_entries();
            let v = thin_qr(&TallThin::new(gaussian(d_cols, r, 9)).unwrap())
                .q
                .into_entries();
            let mut vals = vec![0.0; r];
            for (i, v) in vals.iter_mut().enumerate() {
                *v = (r - i) as f64;
            }
            GeneralLowRank::new(u, Array1::from_vec(vals), v).unwrap()
        };
        let a = TallThin::new(gaussian(m, n, 10)).unwrap();
        let b = TallThin::new(gaussian(d_cols, n, 11)).unwrap();
        let updated = brand_update(&x, &a, &b).unwrap();

        let target = x.densify() + &a.entries().dot(&b.entries().t());
        assert!(updated.rank() <= r + n);
        assert!(max_abs(&(&updated.densify() - &target)) < 1e-9 * (1.0 + max_abs(&target)));

        // Dense SVD oracle via the symmetric embedding of the target.
        let (mm, nn) = target.dim();
        let mut emb = Array2::<f64>::zeros((mm + nn, mm + nn));
        for i in 0..mm {
            for j in 0..nn {
                emb[[i, mm + j]] = target[[i, j]];
                emb[[mm + j, i]] = target[[i, j]];
            }
        }
        let (vals, _) = sym_eigen_parts(&emb).unwrap();
        for (got, want) in updated.d.iter().zip(vals.iter()) {
            assert!((got - want).abs() < 1e-9 * (1.0 + want));
        }
    }

    #[test]
    fn brand_rank_budget_is_enforced() {
        let x = GeneralLowRank::zero(4, 4);
        let a = TallThin::new(gaussian(4, 4, 12)).unwrap();
        match brand_update(&x, &a, &a) {
            Err(KfoError::RankBudgetExceeded { .. }) => {}
            other => panic!("expected RankBudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_zero_update_is_identity_map() {
        let rep = random_lowrank(16, 4, 21);
        let updated = symmetric_brand(&rep, &TallThin::zeros(16, 2).unwrap()).unwrap();
        assert_eq!(updated.rank(), rep.rank());
        let diff = rep.densify().sub(&updated.densify()).unwrap();
        assert!(diff.frob_norm() < 1e-10 * (1.0 + rep.frob_norm()));
    }

    #[test]
    fn symmetric_from_zero_single_column() {
        let mut col = Array2::zeros((5, 1));
        col[[0, 0]] = 1.0;
        let rep = symmetric_brand(&LowRankSpsd::zero(5), &TallThin::new(col).unwrap()).unwrap();
        assert_eq!(rep.rank(), 1);
        assert!((rep.eigvals()[0] - 1.0).abs() < 1e-12);
        assert!((rep.basis()[[0, 0]].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_random_case_matches_dense_evd() {
        let d = 32;
        let rep = random_lowrank(d, 5, 33);
        let a = TallThin::new(gaussian(d, 3, 34)).unwrap();
        let updated = symmetric_brand(&rep, &a).unwrap();

        let mut target = rep.densify().entries().clone();
        target += &a.entries().dot(&a.entries().t());
        let scale = 1.0 + max_abs(&target);
        assert!(max_abs(&(updated.densify().entries() - &target)) < 1e-9 * scale);

        let mut sym = target.clone();
        symmetrize(&mut sym);
        let (vals, _) = sym_eigen_parts(&sym).unwrap();
        for (got, want) in updated.eigvals().iter().zip(vals.iter()) {
            assert!((got - want).abs() < 1e-9 * (1.0 + want));
        }
        assert!(updated.eigvals().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn update_inside_current_span_keeps_subspace() {
        let d = 20;
        let r = 5;
        let rep = random_lowrank(d, r, 40);
        // Columns of A inside span(U).
        let coeff = gaussian(r, 2, 41);
        let a = TallThin::new(rep.basis().dot(&coeff)).unwrap();
        let updated = symmetric_brand(&rep, &a).unwrap();
        assert_eq!(updated.rank(), r);
        let angles = principal_angles(updated.basis(), rep.basis());
        assert!(angles.iter().all(|&t| t <= 1e-8));
    }

    #[test]
    fn symmetric_rank_budget_is_enforced() {
        let rep = random_lowrank(6, 3, 50);
        let a = TallThin::new(gaussian(6, 3, 51)).unwrap();
        match symmetric_brand(&rep, &a) {
            Err(KfoError::RankBudgetExceeded { .. }) => {}
            other => panic!("expected RankBudgetExceeded, got {other:?}"),
        }
    }
}
