//! `kfo apply`: build regularized inverses from recorded factor streams and
//! precondition factored gradients, via the dense path, the linear path, or
//! both.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use kfo_core::linalg::{symmetric_evd, truncate, DenseSym, LowRankSpsd, TallThin};
use kfo_core::maintainers::{apply_inverse_linear, make_reg_inverse, RegularizedInverse, Side};
use kfo_core::stream::{load_stream, save_matrices};

use crate::config::ApplyConfig;
use crate::CliError;

/// Exponentially averages a recorded factor stream into its exact factor.
fn accumulate(updates: &[TallThin], rho: f64) -> Result<DenseSym, CliError> {
    let first = updates
        .first()
        .ok_or_else(|| CliError::config("factor stream must not be empty".to_string()))?;
    let mut factor = DenseSym::from_gram(first);
    for u in &updates[1..] {
        let gram = DenseSym::from_gram(u);
        factor
            .scale_add(rho, &gram, 1.0 - rho)
            .map_err(CliError::from)?;
    }
    Ok(factor)
}

fn build_inverse(cfg: &ApplyConfig, factor: &DenseSym) -> Result<RegularizedInverse, CliError> {
    let full = symmetric_evd(factor).map_err(CliError::from)?;
    let rep: LowRankSpsd = if cfg.r > 0 {
        truncate(&full, cfg.r)
    } else {
        full
    };
    make_reg_inverse(&rep, cfg.lambda_mode()?, cfg.continuation).map_err(CliError::from)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = PathBuf::from(rel);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn run(config_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", config_path.display())))?;
    let cfg = ApplyConfig::parse(&text)?;
    let base = out.unwrap_or_else(|| {
        config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });

    let factors_a = load_stream(&resolve(&base, &cfg.factors_a)).map_err(CliError::from)?;
    let factors_g = load_stream(&resolve(&base, &cfg.factors_g)).map_err(CliError::from)?;
    let grads_a = load_stream(&resolve(&base, &cfg.grad_a)).map_err(CliError::from)?;
    let grads_g = load_stream(&resolve(&base, &cfg.grad_g)).map_err(CliError::from)?;
    if grads_a.len() != grads_g.len() {
        return Err(CliError::config(format!(
            "gradient streams must have equal length: {} vs {}",
            grads_g.len(),
            grads_a.len()
        )));
    }

    let inv_a = build_inverse(&cfg, &accumulate(&factors_a, cfg.rho)?)?;
    let inv_g = build_inverse(&cfg, &accumulate(&factors_g, cfg.rho)?)?;

    let want_dense = cfg.mode == "dense" || cfg.mode == "both";
    let want_linear = cfg.mode == "linear" || cfg.mode == "both";
    let mut dense_steps: Vec<Array2<f64>> = Vec::new();
    let mut linear_steps: Vec<Array2<f64>> = Vec::new();
    for (g, a) in grads_g.iter().zip(grads_a.iter()) {
        if want_dense {
            let grad = g.entries().dot(&a.entries().t());
            let step = inv_g
                .apply(
                    &inv_a.apply(&grad, Side::Right).map_err(CliError::from)?,
                    Side::Left,
                )
                .map_err(CliError::from)?;
            dense_steps.push(step);
        }
        if want_linear {
            linear_steps.push(apply_inverse_linear(&inv_g, &inv_a, g, a).map_err(CliError::from)?);
        }
    }

    if want_dense {
        let path = resolve(&base, &cfg.out_dense);
        save_matrices(&path, &dense_steps).map_err(CliError::from)?;
        println!("wrote {}", path.display());
    }
    if want_linear {
        let path = resolve(&base, &cfg.out_linear);
        save_matrices(&path, &linear_steps).map_err(CliError::from)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
