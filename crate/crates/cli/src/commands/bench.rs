//! `kfo bench`: median step times per dimension and log-log slope fits.
//!
//! Slopes outside the expected windows produce warnings, not failures;
//! absolute timings are machine-dependent.

use std::path::Path;
use std::time::Instant;

use kfo_core::brand::symmetric_brand;
use kfo_core::linalg::{rsvd_spsd, thin_qr, truncate, DenseSym, LowRankSpsd, TallThin};

use crate::CliError;

/// Deterministic pseudo-Gaussian fill, cheap enough for large fixtures.
fn fixture_matrix(rows: usize, cols: usize, seed: u64) -> TallThin {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next = move || {
        // splitmix64 followed by a sum of uniforms, approximately normal.
        let mut acc = 0.0;
        for _ in 0..4 {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            acc += (z as f64 / u64::MAX as f64) - 0.5;
        }
        acc * (3.0f64).sqrt()
    };
    let mut m = ndarray::Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = next();
        }
    }
    TallThin::new(m).expect("fixture is tall")
}

#[derive(serde::Serialize)]
pub struct SlopeReport {
    pub strategy: String,
    pub slope: f64,
    pub expected_min: f64,
    pub expected_max: f64,
    pub within_expected: bool,
}

pub struct BenchOutcome {
    pub rows: Vec<(String, usize, u128)>,
    pub slopes: Vec<SlopeReport>,
}

/// Builds a rank-`r` representation plus one update for dimension `d`
/// without ever forming a dense matrix.
fn online_fixture(d: usize, r: usize, n_bs: usize, seed: u64) -> (LowRankSpsd, TallThin) {
    let basis = thin_qr(&fixture_matrix(d, r, seed)).q.into_entries();
    let eigvals = ndarray::Array1::from_iter((0..basis.ncols()).map(|i| (-(i as f64) / 8.0).exp()));
    let rep = LowRankSpsd::new(basis, eigvals).expect("fixture rep");
    (rep, fixture_matrix(d, n_bs, seed ^ 0xfeed))
}

fn dense_fixture(d: usize, r: usize, seed: u64) -> DenseSym {
    DenseSym::from_gram(&fixture_matrix(d, (r + 16).min(d - 1), seed))
}

fn median(mut xs: Vec<u128>) -> u128 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// Warm up, then repeat until both `reps` samples and ~250ms of total timing
/// are collected (capped), appending into `samples`. Cheap operations get
/// more repetitions, which keeps their medians stable on noisy machines.
fn sample_op<F>(reps: usize, samples: &mut Vec<u128>, mut op: F) -> Result<(), CliError>
where
    F: FnMut() -> Result<(), CliError>,
{
    let warm_start = Instant::now();
    op()?;
    let probe = warm_start.elapsed().as_nanos().max(1);
    let budget: u128 = 250_000_000;
    let target = reps.max(((budget / probe) as usize).min(50)).max(1);
    for _ in 0..target {
        let start = Instant::now();
        op()?;
        samples.push(start.elapsed().as_nanos());
    }
    Ok(())
}

fn fit_slope(points: &[(usize, u128)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(d, _)| (*d as f64).ln()).collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|(_, t)| (*t as f64).max(1.0).ln())
        .collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    num / den
}

/// Runs the benchmark grid; separated from I/O for reuse in tests.
pub fn run_grid(
    dims: &[usize],
    r: usize,
    n_bs: usize,
    reps: usize,
) -> Result<BenchOutcome, CliError> {
    if dims.is_empty() {
        return Err(CliError::config(
            "field `dims` must not be empty".to_string(),
        ));
    }
    for &d in dims {
        if d <= r + n_bs {
            return Err(CliError::config(format!(
                "field `dims` entries must exceed r + n_bs = {}, got {d}",
                r + n_bs
            )));
        }
    }
    let reps = reps.max(1);
    let rho = 0.95f64;

    // Pre-warm at the largest dimension: the first measurements otherwise
    // absorb CPU frequency ramp-up and allocator growth.
    let d_max = *dims.iter().max().expect("dims non-empty");
    {
        let (rep, update) = online_fixture(d_max, r, n_bs, 7);
        let dense = dense_fixture(d_max, r, 8);
        for _ in 0..2 {
            let out =
                symmetric_brand(&truncate(&rep, r).scaled(rho), &update).map_err(CliError::from)?;
            std::hint::black_box(out.max_eig());
            let out = rsvd_spsd(&dense, r, 10, 1, 3).map_err(CliError::from)?;
            std::hint::black_box(out.max_eig());
        }
    }

    // Two interleaved passes over the grid so slow thermal or scheduling
    // drift does not bias one end of the dimension range.
    let mut online_samples: Vec<Vec<u128>> = vec![Vec::new(); dims.len()];
    let mut sketch_samples: Vec<Vec<u128>> = vec![Vec::new(); dims.len()];
    let half = reps.div_ceil(2);
    for _pass in 0..2 {
        for (slot, &d) in dims.iter().enumerate() {
            let (rep, update) = online_fixture(d, r, n_bs, 42 + d as u64);
            let scaled_update = update.scaled((1.0 - rho).sqrt());
            sample_op(half, &mut online_samples[slot], || {
                let out = symmetric_brand(&truncate(&rep, r).scaled(rho), &scaled_update)
                    .map_err(CliError::from)?;
                std::hint::black_box(out.max_eig());
                Ok(())
            })?;

            let dense = dense_fixture(d, r, 43 + d as u64);
            let mut seed = 1000u64;
            sample_op(half, &mut sketch_samples[slot], || {
                seed += 1;
                let out = rsvd_spsd(&dense, r, 10, 4, seed).map_err(CliError::from)?;
                std::hint::black_box(out.max_eig());
                Ok(())
            })?;
        }
    }

    let mut rows = Vec::new();
    let mut online_points = Vec::new();
    let mut sketch_points = Vec::new();
    for (slot, &d) in dims.iter().enumerate() {
        let med = median(std::mem::take(&mut online_samples[slot]));
        rows.push(("b-kfac".to_string(), d, med));
        online_points.push((d, med));
        let med = median(std::mem::take(&mut sketch_samples[slot]));
        rows.push(("r-kfac".to_string(), d, med));
        sketch_points.push((d, med));
    }

    let slopes = vec![
        SlopeReport {
            strategy: "b-kfac".into(),
            slope: fit_slope(&online_points),
            expected_min: 0.7,
            expected_max: 1.4,
            within_expected: (0.7..=1.4).contains(&fit_slope(&online_points)),
        },
        SlopeReport {
            strategy: "r-kfac".into(),
            slope: fit_slope(&sketch_points),
            expected_min: 1.7,
            expected_max: f64::INFINITY,
            within_expected: fit_slope(&sketch_points) >= 1.7,
        },
    ];
    Ok(BenchOutcome { rows, slopes })
}

pub fn run(dims: &[usize], r: usize, n_bs: usize, reps: usize, out: &Path) -> Result<(), CliError> {
    let outcome = run_grid(dims, r, n_bs, reps)?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
    let mut csv = String::from("strategy,d,median_ns_per_step\n");
    for (strategy, d, ns) in &outcome.rows {
        csv.push_str(&format!("{strategy},{d},{ns}\n"));
    }
    let csv_path = out.join("bench.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", csv_path.display())))?;

    let slopes_path = out.join("bench_slopes.json");
    let json = serde_json::to_string_pretty(&outcome.slopes).expect("slopes serialize") + "\n";
    std::fs::write(&slopes_path, json)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", slopes_path.display())))?;

    for s in &outcome.slopes {
        let status = if s.within_expected { "OK  " } else { "WARN" };
        println!(
            "{status} {} slope {:.3} (expected [{:.1}, {:.1}])",
            s.strategy, s.slope, s.expected_min, s.expected_max
        );
    }
    println!("wrote {}", csv_path.display());
    println!("wrote {}", slopes_path.display());
    Ok(())
}
