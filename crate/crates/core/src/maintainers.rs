//! Maintenance strategies for the low-rank factor representation, spectrum
//! continuation, and regularized inverse application.
//!
//! All strategies share one representation type so the inverse-application
//! path is identical whether the spectrum came from a full eigendecomposition,
//! a randomized sketch, or a chain of online updates.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brand::symmetric_brand;
use crate::error::{KfoError, Result};
use crate::linalg::{
    rsvd_spsd, symmetric_evd, symmetrize, truncate, DenseSym, LowRankSpsd, TallThin,
};

/// How the factor representation is kept in sync with the stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Full eigendecomposition of the exact factor every `t_inv` steps.
    ExactKfac { t_inv: u64 },
    /// Randomized sketch of the exact factor every `t_inv` steps.
    RKfac {
        t_inv: u64,
        r: usize,
        r_o: usize,
        n_pwr: usize,
    },
    /// Truncate to rank `r`, then fold the incoming update in exactly.
    BKfac { t_brand: u64, r: usize },
    /// Like `BKfac`, but every `t_rsvd` steps the truncation is replaced by a
    /// fresh sketch of the previous exact factor.
    BRKfac {
        t_brand: u64,
        t_rsvd: u64,
        r: usize,
        r_o: usize,
        n_pwr: usize,
    },
    /// Like `BKfac`, plus a random-subspace correction every `t_corct` steps.
    BKfacC {
        t_brand: u64,
        t_corct: u64,
        phi_crc: f64,
        r: usize,
    },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        let check_period = |p: u64, field: &'static str| -> Result<()> {
            if p < 1 {
                return Err(KfoError::InvalidConfig {
                    field,
                    reason: "period must be >= 1".into(),
                });
            }
            Ok(())
        };
        let check_rank = |r: usize| -> Result<()> {
            if r < 1 {
                return Err(KfoError::InvalidConfig {
                    field: "r",
                    reason: "rank must be >= 1".into(),
                });
            }
            Ok(())
        };
        match *self {
            Strategy::ExactKfac { t_inv } => check_period(t_inv, "t_inv"),
            Strategy::RKfac { t_inv, r, .. } => {
                check_period(t_inv, "t_inv")?;
                check_rank(r)
            }
            Strategy::BKfac { t_brand, r } => {
                check_period(t_brand, "t_brand")?;
                check_rank(r)
            }
            Strategy::BRKfac {
                t_brand, t_rsvd, r, ..
            } => {
                check_period(t_brand, "t_brand")?;
                check_period(t_rsvd, "t_rsvd")?;
                check_rank(r)
            }
            Strategy::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            } => {
                check_period(t_brand, "t_brand")?;
                check_period(t_corct, "t_corct")?;
                check_rank(r)?;
                if !(phi_crc > 0.0 && phi_crc <= 1.0) {
                    return Err(KfoError::InvalidConfig {
                        field: "phi_crc",
                        reason: format!("must be in (0, 1], got {phi_crc}"),
                    });
                }
                Ok(())
            }
        }
    }

    /// Stable label used in CSV output; distinct strategies never collide.
    pub fn label(&self) -> String {
        match self {
            Strategy::ExactKfac { t_inv } => format!("exact-kfac[t_inv={t_inv}]"),
            Strategy::RKfac {
                t_inv,
                r,
                r_o,
                n_pwr,
            } => format!("r-kfac[t_inv={t_inv},r={r},r_o={r_o},n_pwr={n_pwr}]"),
            Strategy::BKfac { t_brand, r } => format!("b-kfac[t_brand={t_brand},r={r}]"),
            Strategy::BRKfac {
                t_brand,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            } => format!(
                "b-r-kfac[t_brand={t_brand},t_rsvd={t_rsvd},r={r},r_o={r_o},n_pwr={n_pwr}]"
            ),
            Strategy::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            } => format!("b-kfac-c[t_brand={t_brand},t_corct={t_corct},phi_crc={phi_crc},r={r}]"),
        }
    }
}

/// Dense context handed to the maintainer each step. The current factor is
/// only touched by strategies that re-sketch or correct; pure online updates
/// never read it.
pub struct StepInputs<'a> {
    pub update: &'a TallThin,
    /// Exact factor before this step's average update.
    pub prev_factor: &'a DenseSym,
    /// Exact factor after this step's average update.
    pub curr_factor: &'a DenseSym,
    pub rho: f64,
}

/// A strategy plus its current representation and step counter.
#[derive(Debug, Clone)]
pub struct MaintainerState {
    strategy: Strategy,
    k: u64,
    rep: LowRankSpsd,
    rng: ChaCha8Rng,
}

impl MaintainerState {
    /// Initializes at step 0 from the first update and its Gram matrix.
    ///
    /// Eigendecomposition-based strategies decompose the initial factor;
    /// online strategies fold the first update into an empty representation,
    /// which reproduces the initial factor exactly because it is the plain
    /// Gram matrix of the first update.
    pub fn init(
        strategy: Strategy,
        first_update: &TallThin,
        initial_factor: &DenseSym,
        seed: u64,
    ) -> Result<Self> {
        strategy.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = match &strategy {
            Strategy::ExactKfac { .. } => symmetric_evd(initial_factor)?,
            Strategy::RKfac { r, r_o, n_pwr, .. } => {
                let s = rng.random::<u64>();
                rsvd_spsd(initial_factor, *r, *r_o, *n_pwr, s)?
            }
            Strategy::BKfac { .. } | Strategy::BRKfac { .. } | Strategy::BKfacC { .. } => {
                symmetric_brand(&LowRankSpsd::zero(first_update.rows()), first_update)?
            }
        };
        Ok(Self {
            strategy,
            k: 0,
            rep,
            rng,
        })
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn rep(&self) -> &LowRankSpsd {
        &self.rep
    }

    /// Advances to the next stream step; acts only when the strategy's
    /// schedule fires (the exact stream always advances regardless).
    pub fn step(&mut self, inputs: StepInputs<'_>) -> Result<()> {
        self.k += 1;
        let k = self.k;
        match self.strategy.clone() {
            Strategy::ExactKfac { t_inv } => {
                if k.is_multiple_of(t_inv) {
                    self.rep = symmetric_evd(inputs.curr_factor)?;
                }
            }
            Strategy::RKfac {
                t_inv,
                r,
                r_o,
                n_pwr,
            } => {
                if k.is_multiple_of(t_inv) {
                    let s = self.rng.random::<u64>();
                    self.rep = rsvd_spsd(inputs.curr_factor, r, r_o, n_pwr, s)?;
                }
            }
            Strategy::BKfac { t_brand, r } => {
                if k.is_multiple_of(t_brand) {
                    self.rep = brand_step(&self.rep, r, inputs.update, inputs.rho)?;
                }
            }
            Strategy::BRKfac {
                t_brand,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            } => {
                if k.is_multiple_of(t_rsvd) {
                    // Overwrite replaces the truncation, then the update is
                    // folded in as usual.
                    let s = self.rng.random::<u64>();
                    let sketched = rsvd_spsd(inputs.prev_factor, r, r_o, n_pwr, s)?;
                    self.rep = symmetric_brand(
                        &sketched.scaled(inputs.rho),
                        &inputs.update.scaled((1.0 - inputs.rho).sqrt()),
                    )?;
                } else if k.is_multiple_of(t_brand) {
                    self.rep = brand_step(&self.rep, r, inputs.update, inputs.rho)?;
                }
            }
            Strategy::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            } => {
                if k.is_multiple_of(t_brand) {
                    self.rep = brand_step(&self.rep, r, inputs.update, inputs.rho)?;
                }
                if k.is_multiple_of(t_corct) && self.rep.rank() > 0 {
                    // Round half up, clamp into [1, min(r, rank)].
                    let n_crc = ((phi_crc * r as f64 + 0.5).floor() as usize)
                        .max(1)
                        .min(r)
                        .min(self.rep.rank());
                    self.rep =
                        light_correction(&self.rep, inputs.curr_factor, n_crc, &mut self.rng)?;
                }
            }
        }
        Ok(())
    }
}

/// Truncate-then-update: the core online step shared by the B-family.
fn brand_step(rep: &LowRankSpsd, r: usize, update: &TallThin, rho: f64) -> Result<LowRankSpsd> {
    let truncated = truncate(rep, r);
    symmetric_brand(&truncated.scaled(rho), &update.scaled((1.0 - rho).sqrt()))
}

/// Replaces `n_crc` randomly chosen modes of `rep` by the exact spectrum of
/// the factor restricted to their span, then restores global ordering.
///
/// The projection of the corrected representation onto the chosen subspace
/// equals that of the exact factor, so the Frobenius error cannot increase.
pub fn light_correction(
    rep: &LowRankSpsd,
    factor: &DenseSym,
    n_crc: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LowRankSpsd> {
    let rank = rep.rank();
    if n_crc < 1 || n_crc > rank {
        return Err(KfoError::InvalidCorrectionSize { n_crc, rank });
    }
    if factor.dim() != rep.dim() {
        return Err(KfoError::DimensionMismatch {
            op: "light_correction",
            expected: format!("{}", rep.dim()),
            got: format!("{}", factor.dim()),
        });
    }

    // n_crc distinct column indices, uniformly without replacement.
    let mut chosen = rand::seq::index::sample(rng, rank, n_crc).into_vec();
    chosen.sort_unstable();

    let d = rep.dim();
    let mut u_sel = Array2::zeros((d, n_crc));
    for (slot, &idx) in chosen.iter().enumerate() {
        u_sel.column_mut(slot).assign(&rep.basis().column(idx));
    }
    let mut small = u_sel.t().dot(&factor.entries().dot(&u_sel));
    symmetrize(&mut small);
    let core = symmetric_evd(&DenseSym::new_psd(small)?)?;
    let corrected_cols = u_sel.dot(core.basis());

    let mut basis = rep.basis().clone();
    let mut vals = rep.eigvals().to_vec();
    for (slot, &idx) in chosen.iter().enumerate() {
        basis.column_mut(idx).assign(&corrected_cols.column(slot));
        vals[idx] = core.eigvals()[slot];
    }

    // Restore the global non-increasing order, keeping columns attached.
    let mut order: Vec<usize> = (0..rank).collect();
    order.sort_by(|&a, &b| {
        vals[b]
            .partial_cmp(&vals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut sorted_basis = Array2::zeros((d, rank));
    let mut sorted_vals = Array1::zeros(rank);
    for (new_idx, &old_idx) in order.iter().enumerate() {
        sorted_basis
            .column_mut(new_idx)
            .assign(&basis.column(old_idx));
        sorted_vals[new_idx] = vals[old_idx];
    }
    Ok(LowRankSpsd::from_parts_unchecked(sorted_basis, sorted_vals))
}

/// Regularization strength for the inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// `lambda = phi * max(D)`.
    Relative(f64),
}

/// `(rep + lambda I)^-1` in factored form, with optional spectrum
/// continuation folded into `(lambda, D)`.
#[derive(Debug, Clone)]
pub struct RegularizedInverse {
    rep: LowRankSpsd,
    lambda: f64,
    shift: f64,
}

/// Builds the regularized inverse. With continuation on, the truncated tail
/// of the spectrum is treated as equal to the smallest retained eigenvalue:
/// `lambda <- lambda + min(D)` and `D <- D - min(D)`.
pub fn make_reg_inverse(
    rep: &LowRankSpsd,
    lambda_mode: LambdaMode,
    continuation: bool,
) -> Result<RegularizedInverse> {
    let lambda = match lambda_mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Relative(phi) => {
            let top = rep.max_eig();
            if top == 0.0 {
                return Err(KfoError::ZeroSpectrum);
            }
            top * phi
        }
    };
    if lambda <= 0.0 {
        return Err(KfoError::InvalidConfig {
            field: "lambda",
            reason: format!("must be > 0, got {lambda}"),
        });
    }
    let shift = if continuation { rep.min_eig() } else { 0.0 };
    Ok(RegularizedInverse {
        rep: rep.clone(),
        lambda,
        shift,
    })
}

/// Which side of the operand the inverse is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl RegularizedInverse {
    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn effective_lambda(&self) -> f64 {
        self.lambda + self.shift
    }

    /// `(rep + lambda I)^-1 J` (left) or `J (rep + lambda I)^-1` (right)
    /// without ever densifying the regularized matrix:
    /// `J U [(D + l)^-1 - l^-1 I] U^T + J / l` with the effective spectrum.
    pub fn apply(&self, j: &Array2<f64>, side: Side) -> Result<Array2<f64>> {
        let d = self.rep.dim();
        let conforming = match side {
            Side::Left => j.nrows(),
            Side::Right => j.ncols(),
        };
        if conforming != d {
            return Err(KfoError::DimensionMismatch {
                op: "apply_inverse",
                expected: format!("{d}"),
                got: format!("{conforming}"),
            });
        }
        let lam = self.effective_lambda();
        let u = self.rep.basis();
        // Diagonal factor (D_eff + lam)^-1 - 1/lam, entrywise on the spectrum.
        let diag: Vec<f64> = self
            .rep
            .eigvals()
            .iter()
            .map(|&v| 1.0 / (v - self.shift + lam) - 1.0 / lam)
            .collect();
        match side {
            Side::Left => {
                let ut_j = u.t().dot(j);
                let mut scaled = ut_j;
                for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
                    row *= diag[i];
                }
                let mut out = u.dot(&scaled);
                out += &(j / lam);
                Ok(out)
            }
            Side::Right => {
                let j_u = j.dot(u);
                let mut scaled = j_u;
                for (i, mut col) in scaled.columns_mut().into_iter().enumerate() {
                    col *= diag[i];
                }
                let mut out = scaled.dot(&u.t());
                out += &(j / lam);
                Ok(out)
            }
        }
    }

    /// Dense `(rep + lambda I)^-1`, for error metrics at small dimensions.
    pub fn densified_inverse(&self) -> Result<Array2<f64>> {
        self.apply(&Array2::eye(self.rep.dim()), Side::Left)
    }
}

/// Applies a regularized inverse to a dense operand.
pub fn apply_inverse(inv: &RegularizedInverse, j: &Array2<f64>, side: Side) -> Result<Array2<f64>> {
    inv.apply(j, side)
}

/// Preconditions a gradient available in factored form `G A^T` without ever
/// materializing it: returns `(invG G)(A^T invA)`, identical to applying both
/// inverses to the dense product.
pub fn apply_inverse_linear(
    inv_g: &RegularizedInverse,
    inv_a: &RegularizedInverse,
    g: &TallThin,
    a: &TallThin,
) -> Result<Array2<f64>> {
    if g.cols() != a.cols() {
        return Err(KfoError::DimensionMismatch {
            op: "apply_inverse_linear",
            expected: format!("{} shared columns", g.cols()),
            got: format!("{}", a.cols()),
        });
    }
    let g_prec = inv_g.apply(g.entries(), Side::Left)?;
    let at_prec = inv_a.apply(&a.entries().t().to_owned(), Side::Right)?;
    Ok(g_prec.dot(&at_prec))
}
