//! Periodic-reset error experiment: exact stream and maintainers advance at
//! update-arrival iterations, metrics are recorded every iteration, and
//! step-direction metrics are averaged within each update period.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ErrorRecord;
use crate::error::{KfoError, Result};
use crate::linalg::TallThin;
use crate::maintainers::{
    make_reg_inverse, LambdaMode, MaintainerState, RegularizedInverse, StepInputs, Strategy,
};
use crate::stream::{ea_step, ExactFactorState, StreamConfig, SyntheticStream};

/// Full experiment settings. Periods inside each [`Strategy`] are expressed
/// in iterations (the same clock as `steps`) and must be multiples of
/// `t_updt`; the per-seed stream advances once every `t_updt` iterations.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    /// Iterations between update arrivals.
    pub t_updt: u64,
    /// Total iterations per run.
    pub steps: u64,
    pub lambda_mode: LambdaMode,
    pub continuation: bool,
}

impl ExperimentConfig {
    fn validate(&self, strategies: &[Strategy]) -> Result<()> {
        self.stream.validate()?;
        if self.t_updt < 1 {
            return Err(KfoError::InvalidConfig {
                field: "t_updt",
                reason: "must be >= 1".into(),
            });
        }
        if self.steps < 1 {
            return Err(KfoError::InvalidConfig {
                field: "steps",
                reason: "must be >= 1".into(),
            });
        }
        if strategies.is_empty() {
            return Err(KfoError::InvalidConfig {
                field: "strategies",
                reason: "at least one strategy required".into(),
            });
        }
        for s in strategies {
            s.validate()?;
            for (period, field) in s.periods() {
                if period % self.t_updt != 0 {
                    return Err(KfoError::InvalidConfig {
                        field,
                        reason: format!(
                            "period {period} must be a multiple of t_updt = {}",
                            self.t_updt
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

impl Strategy {
    /// Schedule periods with their config field names, for validation.
    pub fn periods(&self) -> Vec<(u64, &'static str)> {
        match *self {
            Strategy::ExactKfac { t_inv } => vec![(t_inv, "t_inv")],
            Strategy::RKfac { t_inv, .. } => vec![(t_inv, "t_inv")],
            Strategy::BKfac { t_brand, .. } => vec![(t_brand, "t_brand")],
            Strategy::BRKfac {
                t_brand, t_rsvd, ..
            } => {
                vec![(t_brand, "t_brand"), (t_rsvd, "t_rsvd")]
            }
            Strategy::BKfacC {
                t_brand, t_corct, ..
            } => vec![(t_brand, "t_brand"), (t_corct, "t_corct")],
        }
    }

    /// Rescales iteration-clock periods to the update-arrival clock.
    fn in_arrival_units(&self, t_updt: u64) -> Strategy {
        let f = |p: u64| (p / t_updt).max(1);
        match *self {
            Strategy::ExactKfac { t_inv } => Strategy::ExactKfac { t_inv: f(t_inv) },
            Strategy::RKfac {
                t_inv,
                r,
                r_o,
                n_pwr,
            } => Strategy::RKfac {
                t_inv: f(t_inv),
                r,
                r_o,
                n_pwr,
            },
            Strategy::BKfac { t_brand, r } => Strategy::BKfac {
                t_brand: f(t_brand),
                r,
            },
            Strategy::BRKfac {
                t_brand,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            } => Strategy::BRKfac {
                t_brand: f(t_brand),
                t_rsvd: f(t_rsvd),
                r,
                r_o,
                n_pwr,
            },
            Strategy::BKfacC {
                t_brand,
                t_corct,
                phi_crc,
                r,
            } => Strategy::BKfacC {
                t_brand: f(t_brand),
                t_corct: f(t_corct),
                phi_crc,
                r,
            },
        }
    }
}

/// Records of one (strategy, seed) cell.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy_label: String,
    pub seed: u64,
    pub records: Vec<ErrorRecord>,
}

/// Per-strategy metric means: over steps first, then over seeds.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StrategyAverage {
    pub strategy_label: String,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<StrategyRun>,
    pub averages: Vec<StrategyAverage>,
}

/// Runs the full (strategy x seed) grid, optionally on several threads.
/// Output is independent of `threads`.
pub fn run_error_experiment(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    threads: usize,
) -> Result<ExperimentResult> {
    cfg.validate(strategies)?;
    if seeds.is_empty() {
        return Err(KfoError::InvalidConfig {
            field: "seeds",
            reason: "at least one seed required".into(),
        });
    }

    let cells: Vec<(u64, Strategy)> = seeds
        .iter()
        .flat_map(|&seed| strategies.iter().map(move |s| (seed, s.clone())))
        .collect();

    let mut slots: Vec<Option<Result<StrategyRun>>> = Vec::new();
    slots.resize_with(cells.len(), || None);

    if threads <= 1 {
        for (slot, cell) in slots.iter_mut().zip(cells.iter()) {
            *slot = Some(run_cell(cfg, &cell.1, cell.0));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slot_refs: Vec<std::sync::Mutex<&mut Option<Result<StrategyRun>>>> =
            slots.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            for _ in 0..threads.min(cells.len()) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if idx >= cells.len() {
                        break;
                    }
                    let out = run_cell(cfg, &cells[idx].1, cells[idx].0);
                    **slot_refs[idx].lock().unwrap() = Some(out);
                });
            }
        });
    }

    let mut runs = Vec::with_capacity(cells.len());
    for slot in slots {
        runs.push(slot.expect("every cell executed")?);
    }

    let averages = strategy_averages(strategies, &runs);
    Ok(ExperimentResult { runs, averages })
}

fn strategy_averages(strategies: &[Strategy], runs: &[StrategyRun]) -> Vec<StrategyAverage> {
    strategies
        .iter()
        .map(|s| {
            let label = s.label();
            let mut sums = [0.0f64; 4];
            let mut count = 0usize;
            for run in runs.iter().filter(|r| r.strategy_label == label) {
                let n = run.records.len() as f64;
                if n == 0.0 {
                    continue;
                }
                let mut per_run = [0.0f64; 4];
                for rec in &run.records {
                    per_run[0] += rec.m1;
                    per_run[1] += rec.m2;
                    per_run[2] += rec.m3;
                    per_run[3] += rec.m4;
                }
                for (acc, v) in sums.iter_mut().zip(per_run.iter()) {
                    *acc += v / n;
                }
                count += 1;
            }
            // A strategy listed twice shares a label; its runs then average
            // together, which is harmless because they are identical.
            let denom = count.max(1) as f64;
            StrategyAverage {
                strategy_label: label,
                m1: sums[0] / denom,
                m2: sums[1] / denom,
                m3: sums[2] / denom,
                m4: sums[3] / denom,
            }
        })
        .collect()
}

/// One (strategy, seed) cell: two independent factor streams (forward and
/// backward), the strategy's maintainer on each, and an exact benchmark
/// refreshed at every arrival.
fn run_cell(cfg: &ExperimentConfig, strategy: &Strategy, seed: u64) -> Result<StrategyRun> {
    let arrival_strategy = strategy.in_arrival_units(cfg.t_updt);

    let mut cfg_a = cfg.stream.clone();
    cfg_a.seed = seed;
    let mut cfg_g = cfg.stream.clone();
    cfg_g.seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let stream_a = SyntheticStream::new(cfg_a)?;
    let stream_g = SyntheticStream::new(cfg_g)?;

    let mut exact_a = ExactFactorState::init(stream_a.update_at(0));
    let mut exact_g = ExactFactorState::init(stream_g.update_at(0));

    let benchmark = Strategy::ExactKfac { t_inv: 1 };
    let mut ref_a = MaintainerState::init(
        benchmark.clone(),
        exact_a.last_update(),
        exact_a.factor(),
        seed ^ 0xa,
    )?;
    let mut ref_g = MaintainerState::init(
        benchmark,
        exact_g.last_update(),
        exact_g.factor(),
        seed ^ 0xb,
    )?;
    let mut apx_a = MaintainerState::init(
        arrival_strategy.clone(),
        exact_a.last_update(),
        exact_a.factor(),
        seed ^ 0x1,
    )?;
    let mut apx_g = MaintainerState::init(
        arrival_strategy,
        exact_g.last_update(),
        exact_g.factor(),
        seed ^ 0x2,
    )?;

    // Per-iteration gradient factors come from their own deterministic rng.
    let mut grad_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6ead);
    let grad_cols = cfg.stream.update_cols;
    let dim = cfg.stream.dim;

    let mut records: Vec<ErrorRecord> = Vec::with_capacity(cfg.steps as usize);
    let mut inverses: Option<(
        RegularizedInverse,
        RegularizedInverse,
        RegularizedInverse,
        RegularizedInverse,
    )> = None;
    let mut cached_m12 = (0.0, 0.0);
    let mut period_buf: Vec<(u64, f64, f64)> = Vec::with_capacity(cfg.t_updt as usize);

    for it in 0..cfg.steps {
        if it % cfg.t_updt == 0 {
            if it > 0 {
                let j = it / cfg.t_updt;
                let (ua, ug) = (stream_a.update_at(j), stream_g.update_at(j));
                let next_a = ea_step(&exact_a, ua.clone(), cfg.stream.rho)?;
                let next_g = ea_step(&exact_g, ug.clone(), cfg.stream.rho)?;
                for (m, u, prev, curr) in [
                    (&mut ref_a, &ua, exact_a.factor(), next_a.factor()),
                    (&mut apx_a, &ua, exact_a.factor(), next_a.factor()),
                    (&mut ref_g, &ug, exact_g.factor(), next_g.factor()),
                    (&mut apx_g, &ug, exact_g.factor(), next_g.factor()),
                ] {
                    m.step(StepInputs {
                        update: u,
                        prev_factor: prev,
                        curr_factor: curr,
                        rho: cfg.stream.rho,
                    })?;
                }
                exact_a = next_a;
                exact_g = next_g;
            }
            // Identical regularization for benchmark and approximation: the
            // relative rule is evaluated on the benchmark spectrum.
            let lam_a = resolve_lambda(cfg.lambda_mode, ref_a.rep().max_eig())?;
            let lam_g = resolve_lambda(cfg.lambda_mode, ref_g.rep().max_eig())?;
            let inv = (
                make_reg_inverse(apx_a.rep(), LambdaMode::Fixed(lam_a), cfg.continuation)?,
                make_reg_inverse(apx_g.rep(), LambdaMode::Fixed(lam_g), cfg.continuation)?,
                make_reg_inverse(ref_a.rep(), LambdaMode::Fixed(lam_a), cfg.continuation)?,
                make_reg_inverse(ref_g.rep(), LambdaMode::Fixed(lam_g), cfg.continuation)?,
            );
            cached_m12 = (
                super::inverse_error(&inv.0, &inv.2)?,
                super::inverse_error(&inv.1, &inv.3)?,
            );
            inverses = Some(inv);
        }

        let (inv_a, inv_g, ref_inv_a, ref_inv_g) = inverses.as_ref().expect("initialized at it=0");
        let grad_g = gaussian_tall(&mut grad_rng, dim, grad_cols)?;
        let grad_a = gaussian_tall(&mut grad_rng, dim, grad_cols)?;
        let dense_grad = grad_g.entries().dot(&grad_a.entries().t());
        let s_apx = inv_g.apply(
            &inv_a.apply(&dense_grad, crate::maintainers::Side::Right)?,
            crate::maintainers::Side::Left,
        )?;
        let s_ref = ref_inv_g.apply(
            &ref_inv_a.apply(&dense_grad, crate::maintainers::Side::Right)?,
            crate::maintainers::Side::Left,
        )?;
        let (m3, m4) = super::step_direction_metrics(&s_apx, &s_ref)?;
        period_buf.push((it, m3, m4));

        let period_done = (it + 1) % cfg.t_updt == 0 || it + 1 == cfg.steps;
        if period_done {
            let n = period_buf.len() as f64;
            let m3_avg = period_buf.iter().map(|x| x.1).sum::<f64>() / n;
            let m4_avg = period_buf.iter().map(|x| x.2).sum::<f64>() / n;
            for &(step, _, _) in &period_buf {
                records.push(ErrorRecord {
                    step,
                    m1: cached_m12.0,
                    m2: cached_m12.1,
                    m3: m3_avg,
                    m4: m4_avg,
                });
            }
            period_buf.clear();
        }
    }

    Ok(StrategyRun {
        strategy_label: strategy.label(),
        seed,
        records,
    })
}

fn resolve_lambda(mode: LambdaMode, benchmark_top: f64) -> Result<f64> {
    match mode {
        LambdaMode::Fixed(l) => Ok(l),
        LambdaMode::Relative(phi) => {
            if benchmark_top == 0.0 {
                return Err(KfoError::ZeroSpectrum);
            }
            Ok(benchmark_top * phi)
        }
    }
}

fn gaussian_tall(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<TallThin> {
    let mut m = ndarray::Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = StandardNormal.sample(rng);
        }
    }
    TallThin::new(m)
}

/// Serializes runs as `seed,strategy,step,m1,m2,m3,m4` with 17 significant
/// digits, in deterministic (seed, strategy, step) order as provided.
pub fn records_to_csv(runs: &[StrategyRun]) -> String {
    let mut out = String::from("seed,strategy,step,m1,m2,m3,m4\n");
    for run in runs {
        for rec in &run.records {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                run.seed, run.strategy_label, rec.step, rec.m1, rec.m2, rec.m3, rec.m4
            ));
        }
    }
    out
}

/// Fraction of reset periods whose metric-1 value at the reset iteration is
/// no larger than at the last iteration of the same period.
pub fn reset_fraction(records: &[ErrorRecord], t_rsvd: u64, t_updt: u64) -> f64 {
    let by_step: std::collections::BTreeMap<u64, f64> =
        records.iter().map(|r| (r.step, r.m1)).collect();
    let max_step = records.iter().map(|r| r.step).max().unwrap_or(0);
    let mut periods = 0u64;
    let mut ok = 0u64;
    let mut reset = t_rsvd;
    while reset + t_rsvd <= max_step + 1 {
        let period_end = reset + t_rsvd - t_updt;
        if let (Some(&at_reset), Some(&at_end)) = (by_step.get(&reset), by_step.get(&period_end)) {
            periods += 1;
            if at_reset <= at_end {
                ok += 1;
            }
        }
        reset += t_rsvd;
    }
    if periods == 0 {
        return 1.0;
    }
    ok as f64 / periods as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            stream: StreamConfig {
                dim: 24,
                update_cols: 3,
                rho: 0.95,
                decay: 4.0,
                drift: 0.05,
                seed,
            },
            t_updt: 5,
            steps: 60,
            lambda_mode: LambdaMode::Relative(0.1),
            continuation: true,
        }
    }

    #[test]
    fn benchmark_against_itself_is_zero() {
        let cfg = base_cfg(1);
        let out = run_error_experiment(&cfg, &[Strategy::ExactKfac { t_inv: 5 }], &[3], 1).unwrap();
        assert_eq!(out.runs.len(), 1);
        assert_eq!(out.runs[0].records.len(), 60);
        for rec in &out.runs[0].records {
            assert!(rec.m1 == 0.0 && rec.m2 == 0.0);
            assert!(rec.m3 < 1e-12 && rec.m4.abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let cfg = base_cfg(2);
        let strategies = vec![
            Strategy::BKfac { t_brand: 5, r: 6 },
            Strategy::RKfac {
                t_inv: 10,
                r: 6,
                r_o: 4,
                n_pwr: 2,
            },
        ];
        let serial = run_error_experiment(&cfg, &strategies, &[1, 2], 1).unwrap();
        let parallel = run_error_experiment(&cfg, &strategies, &[1, 2], 4).unwrap();
        assert_eq!(records_to_csv(&serial.runs), records_to_csv(&parallel.runs));
    }

    #[test]
    fn period_misaligned_schedule_is_rejected() {
        let cfg = base_cfg(3);
        let got = run_error_experiment(&cfg, &[Strategy::BKfac { t_brand: 7, r: 4 }], &[1], 1);
        match got {
            Err(KfoError::InvalidConfig { field, .. }) => assert_eq!(field, "t_brand"),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn no_update_error_grows_on_metric_2() {
        // A sketch refreshed only at the start degrades as the stream drifts:
        // metric 2 should trend upward over the run for most seeds.
        let mut cfg = base_cfg(4);
        cfg.steps = 100;
        let strategies = vec![Strategy::RKfac {
            t_inv: 1000,
            r: 6,
            r_o: 4,
            n_pwr: 2,
        }];
        let out = run_error_experiment(&cfg, &strategies, &[1, 2, 3, 4, 5], 2).unwrap();
        let mut trend_up = 0;
        for run in &out.runs {
            let early: f64 = run.records[..20].iter().map(|r| r.m2).sum::<f64>() / 20.0;
            let late: f64 = run.records[80..].iter().map(|r| r.m2).sum::<f64>() / 20.0;
            if late > early {
                trend_up += 1;
            }
        }
        assert!(trend_up >= 3, "only {trend_up}/5 seeds trended up");
    }

    #[test]
    fn csv_shape_and_determinism() {
        let cfg = base_cfg(5);
        let strategies = vec![Strategy::BKfac { t_brand: 5, r: 6 }];
        let a = run_error_experiment(&cfg, &strategies, &[9], 1).unwrap();
        let b = run_error_experiment(&cfg, &strategies, &[9], 1).unwrap();
        let csv_a = records_to_csv(&a.runs);
        assert_eq!(csv_a, records_to_csv(&b.runs));
        let mut lines = csv_a.lines();
        assert_eq!(lines.next().unwrap(), "seed,strategy,step,m1,m2,m3,m4");
        let first = lines.next().unwrap();
        assert!(first.starts_with("9,b-kfac[t_brand=5,r=6],0,"));
        assert_eq!(csv_a.lines().count(), 61);
    }

    #[test]
    fn reset_fraction_counts_periods() {
        // Synthetic sawtooth: error rises within each 10-step period and
        // drops at resets.
        let mut records = Vec::new();
        for step in 0..40u64 {
            let phase = (step % 10) as f64;
            records.push(ErrorRecord {
                step,
                m1: 0.1 + 0.01 * phase,
                m2: 0.0,
                m3: 0.0,
                m4: 0.0,
            });
        }
        let f = reset_fraction(&records, 10, 1);
        assert!(f == 1.0, "fraction {f}");
    }
}
