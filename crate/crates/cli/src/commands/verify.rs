//! `kfo verify`: run the proposition checks over a parameter grid and write
//! a JSON report. Exit status is zero only if every assertion passes.

use std::path::Path;

use kfo_core::error_analysis::{
    check_error_decomposition, check_error_propagation, check_truncation_lower_bounds,
    check_worst_case_norms, AssertionResult, PropositionReport,
};
use kfo_core::linalg::min_eig_check;
use kfo_core::stream::StreamConfig;
use kfo_core::Result as CoreResult;

use crate::CliError;

struct GridSpec {
    dims: Vec<usize>,
    ranks: Vec<usize>,
    cols: Vec<usize>,
    rhos: Vec<f64>,
    seeds: u64,
    horizon: u64,
    ineq_streams: u64,
    ineq_steps: u64,
}

fn preset(name: &str) -> Result<GridSpec, CliError> {
    match name {
        "small" => Ok(GridSpec {
            dims: vec![12, 16],
            ranks: vec![2, 4],
            cols: vec![1, 2],
            rhos: vec![0.5, 0.95],
            seeds: 3,
            horizon: 8,
            ineq_streams: 5,
            ineq_steps: 20,
        }),
        "standard" => Ok(GridSpec {
            dims: vec![12, 16, 24, 32],
            ranks: vec![2, 4, 8],
            cols: vec![1, 2, 4],
            rhos: vec![0.5, 0.95],
            seeds: 10,
            horizon: 12,
            ineq_streams: 20,
            ineq_steps: 40,
        }),
        other => Err(CliError::config(format!(
            "field `preset` must be \"small\" or \"standard\", got \"{other}\""
        ))),
    }
}

fn stream_cfg(d: usize, n: usize, rho: f64, seed: u64) -> StreamConfig {
    StreamConfig {
        dim: d,
        update_cols: n,
        rho,
        decay: 3.0,
        drift: 0.01,
        seed,
    }
}

/// Folds many reports of the same proposition into one: residuals maximize,
/// passes conjoin.
fn merge(prop: &str, reports: Vec<PropositionReport>) -> PropositionReport {
    let mut merged: Vec<AssertionResult> = Vec::new();
    for report in reports {
        for a in report.assertions {
            match merged.iter_mut().find(|m| m.name == a.name) {
                Some(m) => {
                    m.max_residual = m.max_residual.max(a.max_residual);
                    m.pass = m.pass && a.pass;
                    m.residuals.extend(a.residuals);
                }
                None => merged.push(a),
            }
        }
    }
    PropositionReport {
        prop: prop.into(),
        assertions: merged,
    }
}

fn parallel_collect<T: Send>(
    jobs: Vec<Box<dyn Fn() -> CoreResult<T> + Send + Sync>>,
    threads: usize,
) -> CoreResult<Vec<T>> {
    let mut slots: Vec<Option<CoreResult<T>>> = Vec::new();
    slots.resize_with(jobs.len(), || None);
    if threads <= 1 {
        for (slot, job) in slots.iter_mut().zip(jobs.iter()) {
            *slot = Some(job());
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slot_refs: Vec<std::sync::Mutex<&mut Option<CoreResult<T>>>> =
            slots.iter_mut().map(std::sync::Mutex::new).collect();
        std::thread::scope(|scope| {
            for _ in 0..threads.min(jobs.len()) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if idx >= jobs.len() {
                        break;
                    }
                    **slot_refs[idx].lock().unwrap() = Some(jobs[idx]());
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("job executed"))
        .collect()
}

pub fn run(
    preset_name: &str,
    out: &Path,
    threads: usize,
    inject_bug: bool,
) -> Result<(), CliError> {
    let grid = preset(preset_name)?;

    // Representation-error inequalities on the online maintainer.
    let ineq_reports: Vec<PropositionReport> = {
        let mut jobs: Vec<Box<dyn Fn() -> CoreResult<PropositionReport> + Send + Sync>> =
            Vec::new();
        for seed in 0..grid.ineq_streams {
            let steps = grid.ineq_steps;
            jobs.push(Box::new(move || {
                check_truncation_lower_bounds(&stream_cfg(24, 2, 0.95, 1000 + seed), 5, steps)
            }));
        }
        parallel_collect(jobs, threads)?
    };

    // Grid of identity/bound checks.
    let mut grid_jobs: Vec<Box<dyn Fn() -> CoreResult<[PropositionReport; 3]> + Send + Sync>> =
        Vec::new();
    for &d in &grid.dims {
        for &r in &grid.ranks {
            for &n in &grid.cols {
                if r >= d || n >= d {
                    continue;
                }
                for &rho in &grid.rhos {
                    for seed in 0..grid.seeds {
                        let horizon = grid.horizon;
                        grid_jobs.push(Box::new(move || {
                            let cfg = stream_cfg(d, n, rho, 7000 + seed);
                            let overwrite_at = 3.min(horizon - 1);
                            Ok([
                                check_error_propagation(&cfg, r, overwrite_at, horizon)?,
                                check_error_decomposition(&cfg, r, horizon)?,
                                check_worst_case_norms(&cfg, r, horizon)?,
                            ])
                        }));
                    }
                }
            }
        }
    }
    let grid_reports = parallel_collect(grid_jobs, threads)?;

    let mut p32 = Vec::new();
    let mut p41 = Vec::new();
    let mut p42 = Vec::new();
    for [a, b, c] in grid_reports {
        p32.push(a);
        p41.push(b);
        p42.push(c);
    }

    let mut reports = vec![
        merge("truncation_lower_bounds", ineq_reports),
        merge("error_propagation", p32),
        merge("error_decomposition", p41),
        merge("worst_case_norms", p42),
    ];

    if inject_bug {
        // Negative control: evaluate a PSD assertion on a spectrum with a
        // deliberately flipped sign.
        let gram = {
            let cfg = stream_cfg(8, 2, 0.9, 1);
            let stream = kfo_core::stream::SyntheticStream::new(cfg)?;
            kfo_core::linalg::DenseSym::from_gram(&stream.update_at(0))
        };
        let flipped = gram.sub(&gram)?.sub(&gram)?; // -gram: spectrum negated
        let min_eig = min_eig_check(&flipped)?;
        let residual = (-min_eig).max(0.0);
        reports.push(PropositionReport {
            prop: "injected_negative_control".into(),
            assertions: vec![AssertionResult {
                name: "sign_flipped_psd_check".into(),
                max_residual: residual,
                pass: residual <= 1e-9,
                residuals: vec![residual],
            }],
        });
    }

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("verify_report.json");
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
    std::fs::write(&path, json)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;

    let mut all_pass = true;
    for report in &reports {
        for a in &report.assertions {
            let status = if a.pass { "PASS" } else { "FAIL" };
            println!(
                "{status} {}::{} max_residual={:.3e}",
                report.prop, a.name, a.max_residual
            );
            all_pass &= a.pass;
        }
    }
    println!("wrote {}", path.display());
    if !all_pass {
        return Err(CliError::verify_failed(
            "one or more proposition checks failed".to_string(),
        ));
    }
    Ok(())
}
