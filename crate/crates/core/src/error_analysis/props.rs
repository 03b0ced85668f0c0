//! Numerical oracles for the truncation-error propositions.
//!
//! Everything here runs fully dense at small dimension: the exact factor
//! process, the truncated online process, and any overwritten variant are
//! simulated with explicit matrices and exact eigendecomposition truncation,
//! so the identities can be checked entrywise rather than in norm.

use serde::Serialize;

use crate::error::Result;
use crate::linalg::{min_eig_check, sym_eigen_parts, symmetric_evd, truncate, DenseSym, TallThin};
use crate::maintainers::{MaintainerState, StepInputs, Strategy};
use crate::stream::{ea_step, ExactFactorState, StreamConfig, SyntheticStream};

/// One named check with its worst residual across all checked steps.
#[derive(Debug, Clone, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub max_residual: f64,
    pub pass: bool,
    /// Per-step residuals backing `max_residual`; not part of the JSON
    /// interface.
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl AssertionResult {
    fn from_residuals(name: impl Into<String>, residuals: Vec<f64>, tol: f64) -> Self {
        let max_residual = residuals.iter().fold(0.0f64, |a, &b| a.max(b));
        Self {
            name: name.into(),
            max_residual,
            pass: max_residual <= tol,
            residuals,
        }
    }
}

/// Report of one proposition check.
#[derive(Debug, Clone, Serialize)]
pub struct PropositionReport {
    pub prop: String,
    pub assertions: Vec<AssertionResult>,
}

impl PropositionReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

/// Dense simulation of the rank-`r` truncated online process:
/// `next = rho * trunc_r(current) + (1 - rho) * M M^T`.
struct DenseTruncatedProcess {
    current: DenseSym,
    r: usize,
}

impl DenseTruncatedProcess {
    fn init(m0: &DenseSym, r: usize) -> Self {
        Self {
            current: m0.clone(),
            r,
        }
    }

    /// Optimal rank-r truncation of the current state.
    fn truncated(&self) -> Result<DenseSym> {
        Ok(truncate(&symmetric_evd(&self.current)?, self.r).densify())
    }

    /// Advances one step; `override_trunc` replaces the truncation when an
    /// external overwrite happened at the previous index.
    fn advance(
        &mut self,
        update: &TallThin,
        rho: f64,
        override_trunc: Option<&DenseSym>,
    ) -> Result<()> {
        let base = match override_trunc {
            Some(b) => b.clone(),
            None => self.truncated()?,
        };
        let mut next = base;
        next.scale_add(rho, &DenseSym::from_gram(update), 1.0 - rho)?;
        self.current = next;
        Ok(())
    }
}

fn spectral_norm(m: &DenseSym) -> Result<f64> {
    let (vals, _) = sym_eigen_parts(m.entries())?;
    Ok(vals.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
}

fn exact_trajectory(
    stream: &SyntheticStream,
    steps: u64,
    rho: f64,
) -> Result<(Vec<DenseSym>, Vec<TallThin>)> {
    let mut updates = vec![stream.update_at(0)];
    let mut factors = Vec::with_capacity(steps as usize + 1);
    let mut state = ExactFactorState::init(updates[0].clone());
    factors.push(state.factor().clone());
    for k in 1..=steps {
        let u = stream.update_at(k);
        state = ea_step(&state, u.clone(), rho)?;
        updates.push(u);
        factors.push(state.factor().clone());
    }
    Ok((factors, updates))
}

/// The two representation-error lower bounds against optimal truncation,
/// checked on the maintained online representation at every step, in both
/// Frobenius and spectral norms.
pub fn check_truncation_lower_bounds(
    cfg: &StreamConfig,
    r: usize,
    steps: u64,
) -> Result<PropositionReport> {
    let stream = SyntheticStream::new(cfg.clone())?;
    let (factors, updates) = exact_trajectory(&stream, steps, cfg.rho)?;

    let mut state = ExactFactorState::init(updates[0].clone());
    let mut maint = MaintainerState::init(
        Strategy::BKfac { t_brand: 1, r },
        &updates[0],
        state.factor(),
        cfg.seed ^ 0x5eed,
    )?;

    let mut viol_rank_r = Vec::new();
    let mut viol_rank_rn = Vec::new();
    let mut viol_box = Vec::new();
    for k in 1..=steps {
        let next = ea_step(&state, updates[k as usize].clone(), cfg.rho)?;
        maint.step(StepInputs {
            update: &updates[k as usize],
            prev_factor: state.factor(),
            curr_factor: next.factor(),
            rho: cfg.rho,
        })?;
        state = next;

        let exact = &factors[k as usize];
        let scale = 1.0 + exact.frob_norm();
        let full = symmetric_evd(exact)?;
        let opt_r = truncate(&full, r).densify();
        let opt_rn = truncate(&full, r + cfg.update_cols).densify();
        let rep_full = maint.rep().densify();
        let rep_trunc = truncate(maint.rep(), r).densify();

        let err = |a: &DenseSym, b: &DenseSym| -> Result<(f64, f64)> {
            let diff = a.sub(b)?;
            Ok((diff.frob_norm(), spectral_norm(&diff)?))
        };
        let (bf, bs) = err(exact, &rep_trunc)?;
        let (of, os) = err(exact, &opt_r)?;
        viol_rank_r.push(((of - bf) / scale).max((os - bs) / scale).max(0.0));

        let (tf, ts) = err(exact, &rep_full)?;
        let (pf, ps) = err(exact, &opt_rn)?;
        viol_rank_rn.push(((pf - tf) / scale).max((ps - ts) / scale).max(0.0));

        viol_box.push((tf - bf).max(0.0));
    }

    Ok(PropositionReport {
        prop: "truncation_lower_bounds".into(),
        assertions: vec![
            AssertionResult::from_residuals("rank_r_lower_bound", viol_rank_r, 1e-9),
            AssertionResult::from_residuals("rank_r_plus_n_lower_bound", viol_rank_rn, 1e-9),
            AssertionResult::from_residuals("truncated_rep_not_better", viol_box, 1e-10),
        ],
    })
}

/// Error-propagation identities for the pure and overwritten online
/// processes, their PSD structure, and the one-step improvement guarantee.
pub fn check_error_propagation(
    cfg: &StreamConfig,
    r: usize,
    overwrite_at: u64,
    horizon: u64,
) -> Result<PropositionReport> {
    let stream = SyntheticStream::new(cfg.clone())?;
    let i = overwrite_at;
    let steps = i + horizon;
    let (factors, updates) = exact_trajectory(&stream, steps, cfg.rho)?;

    // Pure process over the whole horizon.
    let mut pure = DenseTruncatedProcess::init(&factors[0], r);
    let mut pure_states = vec![pure.current.clone()];
    let mut pure_truncs = vec![pure.truncated()?];
    for k in 1..=steps {
        pure.advance(&updates[k as usize], cfg.rho, None)?;
        pure_states.push(pure.current.clone());
        pure_truncs.push(pure.truncated()?);
    }

    // Overwritten process: identical through step i, then the truncation at
    // i is replaced by the optimal truncation of the exact factor.
    let opt_trunc_i = truncate(&symmetric_evd(&factors[i as usize])?, r).densify();
    let mut over = DenseTruncatedProcess::init(&factors[0], r);
    for k in 1..=i {
        over.advance(&updates[k as usize], cfg.rho, None)?;
    }
    let mut over_states = vec![over.current.clone()];
    let mut over_truncs = vec![opt_trunc_i.clone()];
    for m in 1..=horizon {
        let k = i + m;
        let override_trunc = if m == 1 { Some(&opt_trunc_i) } else { None };
        over.advance(&updates[k as usize], cfg.rho, override_trunc)?;
        over_states.push(over.current.clone());
        over_truncs.push(over.truncated()?);
    }

    let mut psd_viol = Vec::new();
    let mut ident_over = Vec::new();
    let mut ident_pure = Vec::new();
    let mut one_step = Vec::new();

    let scale_at = |k: u64| 1.0 + factors[k as usize].frob_norm();

    // PSD of the initial-error terms.
    let init_over = factors[i as usize].sub(&opt_trunc_i)?;
    let init_pure = factors[i as usize].sub(&pure_truncs[i as usize])?;
    psd_viol.push((-min_eig_check(&init_over)? / scale_at(i)).max(0.0));
    psd_viol.push((-min_eig_check(&init_pure)? / scale_at(i)).max(0.0));

    for m in 1..=horizon {
        let k = i + m;
        let scale = scale_at(k);

        // Left-hand errors.
        let lhs_over = factors[k as usize].sub(&over_states[m as usize])?;
        let lhs_pure = factors[k as usize].sub(&pure_states[k as usize])?;
        psd_viol.push((-min_eig_check(&lhs_over)? / scale).max(0.0));
        psd_viol.push((-min_eig_check(&lhs_pure)? / scale).max(0.0));

        // Right-hand sums of weighted truncation errors.
        let mut rhs_over = init_over.clone();
        rhs_over.scale_add(cfg.rho.powi(m as i32), &DenseSym::zeros(cfg.dim), 0.0)?;
        let mut rhs_pure = init_pure.clone();
        rhs_pure.scale_add(cfg.rho.powi(m as i32), &DenseSym::zeros(cfg.dim), 0.0)?;
        for j in 1..m {
            let w = cfg.rho.powi((m - j) as i32);
            let term_over = over_states[j as usize].sub(&over_truncs[j as usize])?;
            let term_pure = pure_states[(i + j) as usize].sub(&pure_truncs[(i + j) as usize])?;
            psd_viol.push((-min_eig_check(&term_over)? / scale_at(i + j)).max(0.0));
            psd_viol.push((-min_eig_check(&term_pure)? / scale_at(i + j)).max(0.0));
            rhs_over.scale_add(1.0, &term_over, w)?;
            rhs_pure.scale_add(1.0, &term_pure, w)?;
        }

        let max_abs = |m: &DenseSym| m.entries().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        ident_over.push(max_abs(&lhs_over.sub(&rhs_over)?) / scale);
        ident_pure.push(max_abs(&lhs_pure.sub(&rhs_pure)?) / scale);

        if m == 1 {
            let margin_f = lhs_over.frob_norm() - lhs_pure.frob_norm();
            let margin_s = spectral_norm(&lhs_over)? - spectral_norm(&lhs_pure)?;
            one_step.push(margin_f.max(margin_s).max(0.0) / scale);
        }
    }

    Ok(PropositionReport {
        prop: "error_propagation".into(),
        assertions: vec![
            AssertionResult::from_residuals("parenthesized_terms_psd", psd_viol, 1e-9),
            AssertionResult::from_residuals("overwritten_error_identity", ident_over, 1e-8),
            AssertionResult::from_residuals("pure_error_identity", ident_pure, 1e-8),
            AssertionResult::from_residuals("one_step_overwrite_no_worse", one_step, 1e-9),
        ],
    })
}

/// Exponential-average error decomposition for the no-update and
/// update-every-step regimes after an initial rank-r reduction.
pub fn check_error_decomposition(
    cfg: &StreamConfig,
    r: usize,
    horizon: u64,
) -> Result<PropositionReport> {
    let stream = SyntheticStream::new(cfg.clone())?;
    let (factors, updates) = exact_trajectory(&stream, horizon, cfg.rho)?;
    let trunc0 = truncate(&symmetric_evd(&factors[0])?, r).densify();
    let kappa = |i: u64| if i > 0 { 1.0 - cfg.rho } else { 1.0 };
    let max_abs = |m: &DenseSym| m.entries().iter().fold(0.0f64, |a, &v| a.max(v.abs()));

    // Regime 1: no update after the initial reduction.
    let mut no_update_resid = Vec::new();
    for k in 1..=horizon {
        let mut rhs = DenseSym::zeros(cfg.dim);
        for i in 0..=k {
            let e_i = DenseSym::from_gram(&updates[i as usize]).sub(&trunc0)?;
            rhs.scale_add(1.0, &e_i, kappa(i) * cfg.rho.powi((k - i) as i32))?;
        }
        let lhs = factors[k as usize].sub(&trunc0)?;
        let scale = 1.0 + factors[k as usize].frob_norm();
        no_update_resid.push(max_abs(&lhs.sub(&rhs)?) / scale);
    }

    // Regime 2: truncated online updates every step. The online process and
    // the exact one share the initial factor, so its rank-r truncation is
    // exactly the overwrite value at step 0.
    let mut proc = DenseTruncatedProcess::init(&factors[0], r);
    let mut proc_states = vec![proc.current.clone()];
    let mut proc_truncs = vec![proc.truncated()?];
    for k in 1..=horizon {
        proc.advance(&updates[k as usize], cfg.rho, None)?;
        proc_states.push(proc.current.clone());
        proc_truncs.push(proc.truncated()?);
    }
    let mut b_update_resid = Vec::new();
    let mut final_term_resid = Vec::new();
    for k in 1..=horizon {
        let mut rhs = factors[0].sub(&trunc0)?;
        rhs.scale_add(cfg.rho.powi(k as i32), &DenseSym::zeros(cfg.dim), 0.0)?;
        for i in 1..k {
            // kappa(i) * rho^(k-i) * (1/(1-rho)) * truncation error at i.
            let e_i = proc_states[i as usize].sub(&proc_truncs[i as usize])?;
            rhs.scale_add(1.0, &e_i, cfg.rho.powi((k - i) as i32))?;
        }
        let lhs = factors[k as usize].sub(&proc_states[k as usize])?;
        let scale = 1.0 + factors[k as usize].frob_norm();
        b_update_resid.push(max_abs(&lhs.sub(&rhs)?) / scale);
        // The index-k error term vanishes: the residual *is* kappa(k) E_k.
        final_term_resid.push(lhs.sub(&rhs)?.frob_norm() / ((1.0 - cfg.rho) * scale));
    }

    Ok(PropositionReport {
        prop: "error_decomposition".into(),
        assertions: vec![
            AssertionResult::from_residuals("no_update_decomposition", no_update_resid, 1e-8),
            AssertionResult::from_residuals("online_update_decomposition", b_update_resid, 1e-8),
            AssertionResult::from_residuals("final_error_term_zero", final_term_resid, 1e-10),
        ],
    })
}

/// Worst-case error norms: the online-update bound and the orthogonal
/// no-update construction where the error norm is exactly Pythagorean.
pub fn check_worst_case_norms(
    cfg: &StreamConfig,
    r: usize,
    horizon: u64,
) -> Result<PropositionReport> {
    let stream = SyntheticStream::new(cfg.clone())?;
    let (_, updates) = exact_trajectory(&stream, horizon, cfg.rho)?;
    let m0 = DenseSym::from_gram(&updates[0]);
    let full0 = symmetric_evd(&m0)?;
    let trunc0_rep = truncate(&full0, r);
    let trunc0 = trunc0_rep.densify();

    // (a) online-update regime: ||E_j||_F <= ||M_j M_j^T||_F.
    let mut proc = DenseTruncatedProcess::init(&m0, r);
    let mut bound_viol = Vec::new();
    for j in 1..=horizon {
        let update = &updates[j as usize];
        proc.advance(update, cfg.rho, None)?;
        let err = proc.current.sub(&proc.truncated()?)?;
        let e_norm = err.frob_norm() / (1.0 - cfg.rho);
        let gram_norm = DenseSym::from_gram(update).frob_norm();
        bound_viol.push((e_norm - gram_norm).max(0.0));
    }

    // (b) no-update regime, worst case: updates orthogonal to the retained
    // subspace make the error norm exactly Pythagorean.
    let u0 = trunc0_rep.basis().clone();
    let mut pythag_resid = Vec::new();
    for j in 1..=horizon {
        let raw = updates[j as usize].entries();
        let projected = raw - &u0.dot(&u0.t().dot(raw));
        let m_orth = TallThin::new(projected)?;
        let gram = DenseSym::from_gram(&m_orth);
        let err = gram.sub(&trunc0)?;
        let want = (gram.frob_norm().powi(2) + trunc0.frob_norm().powi(2)).sqrt();
        pythag_resid.push((err.frob_norm() - want).abs() / (1.0 + want));
    }

    Ok(PropositionReport {
        prop: "worst_case_norms".into(),
        assertions: vec![
            AssertionResult::from_residuals("online_update_error_bound", bound_viol, 1e-9),
            AssertionResult::from_residuals(
                "orthogonal_worst_case_pythagorean",
                pythag_resid,
                1e-8,
            ),
        ],
    })
}
