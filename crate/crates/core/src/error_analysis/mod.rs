//! Error metrics against the exact benchmark, numerically checkable
//! identities for the truncation-error propositions, and the periodic-reset
//! experiment harness.

mod experiment;
mod props;

pub use experiment::{
    records_to_csv, reset_fraction, run_error_experiment, ExperimentConfig, ExperimentResult,
    StrategyAverage, StrategyRun,
};
pub use props::{
    check_error_decomposition, check_error_propagation, check_truncation_lower_bounds,
    check_worst_case_norms, AssertionResult, PropositionReport,
};

use ndarray::Array2;

use crate::error::{KfoError, Result};
use crate::linalg::TallThin;
use crate::maintainers::{RegularizedInverse, Side};

/// Per-step values of the four error metrics against the exact benchmark.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ErrorRecord {
    pub step: u64,
    /// Relative Frobenius error of the forward-factor inverse.
    pub m1: f64,
    /// Relative Frobenius error of the backward-factor inverse.
    pub m2: f64,
    /// Relative Frobenius error of the preconditioned step.
    pub m3: f64,
    /// One minus the cosine of the angle between the steps.
    pub m4: f64,
}

/// Relative Frobenius distance between two densified inverses.
pub fn inverse_error(approx: &RegularizedInverse, reference: &RegularizedInverse) -> Result<f64> {
    let a = approx.densified_inverse()?;
    let r = reference.densified_inverse()?;
    let diff = (&a - &r).iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(diff / denom)
}

/// Norm and angle errors between an approximate and a reference step.
pub fn step_direction_metrics(s_approx: &Array2<f64>, s_ref: &Array2<f64>) -> Result<(f64, f64)> {
    let ref_norm = s_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(KfoError::ZeroReference);
    }
    let approx_norm = s_approx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = s_approx
        .iter()
        .zip(s_ref.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let m3 = diff / ref_norm;
    let m4 = if approx_norm == 0.0 {
        1.0
    } else {
        let dot: f64 = s_approx.iter().zip(s_ref.iter()).map(|(a, b)| a * b).sum();
        // Rounding can push 1 - cos a hair outside [0, 2] for collinear steps.
        (1.0 - dot / (approx_norm * ref_norm)).clamp(0.0, 2.0)
    };
    Ok((m3, m4))
}

/// All four metrics for one (gradient, inverses) snapshot.
///
/// The step is the inverse-preconditioned gradient `invG (G A^T) invA`,
/// computed on the dense product for both the approximate and the reference
/// inverses.
pub fn compute_metrics(
    approx_a: &RegularizedInverse,
    approx_g: &RegularizedInverse,
    ref_a: &RegularizedInverse,
    ref_g: &RegularizedInverse,
    grad_g: &TallThin,
    grad_a: &TallThin,
) -> Result<(f64, f64, f64, f64)> {
    let m1 = inverse_error(approx_a, ref_a)?;
    let m2 = inverse_error(approx_g, ref_g)?;
    let dense_grad = grad_g.entries().dot(&grad_a.entries().t());
    let s_approx = approx_g.apply(&approx_a.apply(&dense_grad, Side::Right)?, Side::Left)?;
    let s_ref = ref_g.apply(&ref_a.apply(&dense_grad, Side::Right)?, Side::Left)?;
    let (m3, m4) = step_direction_metrics(&s_approx, &s_ref)?;
    Ok((m1, m2, m3, m4))
}
