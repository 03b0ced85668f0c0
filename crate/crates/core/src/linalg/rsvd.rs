//! Randomized low-rank approximation of symmetric PSD matrices: Gaussian
//! range finder, re-orthonormalized power iterations, symmetric projection.
//! A two-sided (nonsymmetric) sketch would also work here; the symmetric
//! projection needs one fewer pass over the input and keeps the output PSD
//! by construction.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{symmetric_evd, thin_qr, truncate, DenseSym, LowRankSpsd, TallThin};
use crate::error::{KfoError, Result};

/// Rank-`r` PSD approximation of `m` using an `(r + oversample)`-wide sketch
/// and `power_iters` stabilized power iterations. Deterministic in `seed`.
pub fn rsvd_spsd(
    m: &DenseSym,
    target_rank: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<LowRankSpsd> {
    let d = m.dim();
    let width = target_rank + oversample;
    if width > d {
        return Err(KfoError::RankTooLarge {
            requested: width,
            dim: d,
        });
    }
    if width == 0 {
        return Ok(LowRankSpsd::zero(d));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = gaussian_matrix(&mut rng, d, width);

    let mat = m.entries();
    let mut q = orthonormal_range(&mat.dot(&omega));
    for _ in 0..power_iters {
        if q.ncols() == 0 {
            break;
        }
        q = orthonormal_range(&mat.dot(&q));
    }
    if q.ncols() == 0 {
        return Ok(LowRankSpsd::zero(d));
    }

    // Symmetric projection: eigendecompose Q^T M Q and lift back.
    let mut small = q.t().dot(&mat.dot(&q));
    super::symmetrize(&mut small);
    let core = symmetric_evd(&DenseSym::new_psd(small)?)?;
    let lifted = LowRankSpsd::from_parts_unchecked(q.dot(core.basis()), core.eigvals().clone());
    Ok(truncate(&lifted, target_rank))
}

fn orthonormal_range(y: &Array2<f64>) -> Array2<f64> {
    let tall = TallThin { data: y.to_owned() };
    thin_qr(&tall).q.into_entries()
}

/// Standard normal matrix filled in row-major order from `rng`.
pub(crate) fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            out[[i, j]] = StandardNormal.sample(rng);
        }
    }
    out
}

#[cfg(test)]
mod sanity {
    use super::*;

    #[test]
    fn zero_matrix_gives_zero_representation() {
        let m = DenseSym::zeros(6);
        let rep = rsvd_spsd(&m, 3, 2, 2, 7).unwrap();
        assert_eq!(rep.rank(), 0);
        assert_eq!(rep.frob_norm(), 0.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gaussian_matrix(&mut rng, 10, 4);
        let m = DenseSym::from_gram(&TallThin::new(g).unwrap());
        let a = rsvd_spsd(&m, 3, 3, 2, 42).unwrap();
        let b = rsvd_spsd(&m, 3, 3, 2, 42).unwrap();
        assert_eq!(a.basis(), b.basis());
        assert_eq!(a.eigvals(), b.eigvals());
    }
}
