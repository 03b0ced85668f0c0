//! Ground-truth factor streams: the exact exponentially averaged Gram
//! process, a synthetic drifting-spectrum generator, and a binary file
//! format so recorded factor matrices can replace synthetic ones.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{KfoError, Result};
use crate::linalg::{DenseSym, TallThin};

const MAGIC: &[u8; 4] = b"KFST";
const VERSION: u32 = 1;

/// Settings of the synthetic factor stream.
#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Factor dimension d.
    pub dim: usize,
    /// Columns per incoming update (batch-size analog).
    pub update_cols: usize,
    /// Exponential-average weight, in (0, 1).
    pub rho: f64,
    /// Spectral decay rate of the shaping factor: sigma_i = exp(-decay*i/d).
    pub decay: f64,
    /// Subspace rotation per stream step, radians.
    pub drift: f64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(KfoError::InvalidConfig {
                field: "rho",
                reason: format!("must be in (0, 1), got {}", self.rho),
            });
        }
        if self.update_cols < 1 {
            return Err(KfoError::InvalidConfig {
                field: "n_bs",
                reason: "must be >= 1".into(),
            });
        }
        if self.dim < self.update_cols + 1 {
            return Err(KfoError::InvalidConfig {
                field: "d",
                reason: format!(
                    "must be >= n_bs + 1 = {}, got {}",
                    self.update_cols + 1,
                    self.dim
                ),
            });
        }
        if self.decay < 0.0 {
            return Err(KfoError::InvalidConfig {
                field: "decay",
                reason: "must be >= 0".into(),
            });
        }
        if self.drift < 0.0 {
            return Err(KfoError::InvalidConfig {
                field: "drift",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Exact state of the averaged factor process.
#[derive(Debug, Clone)]
pub struct ExactFactorState {
    step: u64,
    m_exact: DenseSym,
    last_update: TallThin,
}

impl ExactFactorState {
    /// Initial condition: the plain Gram matrix of the first update.
    pub fn init(first_update: TallThin) -> Self {
        let m_exact = DenseSym::from_gram(&first_update);
        Self {
            step: 0,
            m_exact,
            last_update: first_update,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn factor(&self) -> &DenseSym {
        &self.m_exact
    }

    pub fn last_update(&self) -> &TallThin {
        &self.last_update
    }
}

/// One step of the exponential average: `M' = rho*M + (1-rho)*U U^T`.
pub fn ea_step(state: &ExactFactorState, update: TallThin, rho: f64) -> Result<ExactFactorState> {
    if update.rows() != state.m_exact.dim() {
        return Err(KfoError::DimensionMismatch {
            op: "ea_step",
            expected: format!("{} rows", state.m_exact.dim()),
            got: format!("{}", update.rows()),
        });
    }
    let gram = DenseSym::from_gram(&update);
    let mut next = state.m_exact.clone();
    next.scale_add(rho, &gram, 1.0 - rho)?;
    Ok(ExactFactorState {
        step: state.step + 1,
        m_exact: next,
        last_update: update,
    })
}

/// Synthetic update generator.
///
/// Columns are `L_k z` with `z` standard Gaussian, where `L_k` applies the
/// decaying singular-value profile in a fixed random frame and rotates the
/// leading subspace by `drift * k` in a fixed random plane. Deterministic in
/// `(seed, k)`.
pub struct SyntheticStream {
    cfg: StreamConfig,
    frame: Array2<f64>,
    sigmas: Vec<f64>,
    plane_p: Vec<f64>,
    plane_q: Vec<f64>,
}

impl SyntheticStream {
    pub fn new(cfg: StreamConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        // Stream 0 of the seed provides the fixed frame and rotation plane.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let raw = gaussian(&mut rng, d, d);
        let frame = crate::linalg::thin_qr(&TallThin::new(raw)?)
            .q
            .into_entries();
        let sigmas: Vec<f64> = (0..d)
            .map(|i| (-cfg.decay * i as f64 / d as f64).exp())
            .collect();

        // Rotation plane spanned by the first two frame columns, so the
        // drift acts on the leading subspace.
        let plane_p = frame.column(0).to_vec();
        let plane_q = frame.column(1).to_vec();
        Ok(Self {
            cfg,
            frame,
            sigmas,
            plane_p,
            plane_q,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    /// The update at step `k`.
    pub fn update_at(&self, k: u64) -> TallThin {
        let d = self.cfg.dim;
        let n = self.cfg.update_cols;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(k + 1);
        let z = gaussian(&mut rng, d, n);

        // frame * diag(sigma) * z, then rotate in the fixed plane.
        let mut shaped = Array2::zeros((d, n));
        for j in 0..n {
            for i in 0..d {
                shaped[[i, j]] = self.sigmas[i] * z[[i, j]];
            }
        }
        let mut cols = self.frame.dot(&shaped);
        let angle = self.cfg.drift * k as f64;
        if angle != 0.0 {
            rotate_in_plane(&mut cols, &self.plane_p, &self.plane_q, angle);
        }
        TallThin::new(cols).expect("generator emits d x n with n <= d")
    }
}

/// Plane rotation `R = I + (cos a - 1)(pp^T + qq^T) + sin a (qp^T - pq^T)`
/// applied to every column of `m`.
fn rotate_in_plane(m: &mut Array2<f64>, p: &[f64], q: &[f64], angle: f64) {
    let (c, s) = (angle.cos(), angle.sin());
    for mut col in m.columns_mut() {
        let cp: f64 = col.iter().zip(p).map(|(x, y)| x * y).sum();
        let cq: f64 = col.iter().zip(q).map(|(x, y)| x * y).sum();
        let np = c * cp - s * cq;
        let nq = s * cp + c * cq;
        for (i, x) in col.iter_mut().enumerate() {
            *x += (np - cp) * p[i] + (nq - cq) * q[i];
        }
    }
}

/// Convenience wrapper mirroring the operation-level API.
pub fn gen_update(cfg: &StreamConfig, k: u64) -> Result<TallThin> {
    Ok(SyntheticStream::new(cfg.clone())?.update_at(k))
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            out[[i, j]] = StandardNormal.sample(rng);
        }
    }
    out
}

/// Writes a sequence of equally sized factor matrices.
///
/// Layout (little-endian): magic `KFST`, u32 version = 1, u32 d, u32 n,
/// u64 count, then `count` records of `d*n` f64 in column-major order.
pub fn save_stream(path: &Path, updates: &[TallThin]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let (d, n) = match updates.first() {
        Some(u) => (u.rows(), u.cols()),
        None => (0, 0),
    };
    for u in updates {
        if u.rows() != d || u.cols() != n {
            return Err(KfoError::DimensionMismatch {
                op: "save_stream",
                expected: format!("{d}x{n}"),
                got: format!("{}x{}", u.rows(), u.cols()),
            });
        }
    }
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(d as u32).to_le_bytes())?;
    file.write_all(&(n as u32).to_le_bytes())?;
    file.write_all(&(updates.len() as u64).to_le_bytes())?;
    for u in updates {
        for j in 0..n {
            for i in 0..d {
                file.write_all(&u.entries()[[i, j]].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Writes arbitrary equally sized matrices in the stream layout. Unlike
/// [`save_stream`] the records may be wide; such files are for external
/// consumers and cannot be read back through [`load_stream`], which only
/// accepts tall records.
pub fn save_matrices(path: &Path, mats: &[Array2<f64>]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let (d, n) = match mats.first() {
        Some(m) => m.dim(),
        None => (0, 0),
    };
    for m in mats {
        if m.dim() != (d, n) {
            return Err(KfoError::DimensionMismatch {
                op: "save_matrices",
                expected: format!("{d}x{n}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(d as u32).to_le_bytes())?;
    file.write_all(&(n as u32).to_le_bytes())?;
    file.write_all(&(mats.len() as u64).to_le_bytes())?;
    for m in mats {
        for j in 0..n {
            for i in 0..d {
                file.write_all(&m[[i, j]].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a stream file written by [`save_stream`]. A zero-length file is an
/// empty stream; anything else malformed reports the offending byte offset.
pub fn load_stream(path: &Path) -> Result<Vec<TallThin>> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    if buf.is_empty() {
        return Ok(Vec::new());
    }
    let mut off = 0usize;
    let take = |off: &mut usize, len: usize, what: &str| -> Result<&[u8]> {
        if *off + len > buf.len() {
            return Err(KfoError::MalformedFile {
                offset: *off as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &buf[*off..*off + len];
        *off += len;
        Ok(s)
    };

    let magic = take(&mut off, 4, "magic")?;
    if magic != MAGIC {
        return Err(KfoError::MalformedFile {
            offset: 0,
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = u32::from_le_bytes(take(&mut off, 4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(KfoError::MalformedFile {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let d = u32::from_le_bytes(take(&mut off, 4, "d")?.try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(take(&mut off, 4, "n")?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(&mut off, 8, "count")?.try_into().unwrap());
    if n > d {
        return Err(KfoError::MalformedFile {
            offset: 12,
            reason: format!("n = {n} exceeds d = {d}"),
        });
    }

    let mut updates = Vec::with_capacity(count as usize);
    for rec in 0..count {
        let bytes = take(&mut off, d * n * 8, &format!("record {rec}"))?;
        let mut m = Array2::zeros((d, n));
        let mut pos = 0;
        for j in 0..n {
            for i in 0..d {
                m[[i, j]] = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
                pos += 8;
            }
        }
        updates.push(TallThin::new(m)?);
    }
    if off != buf.len() {
        return Err(KfoError::MalformedFile {
            offset: off as u64,
            reason: format!("{} trailing bytes", buf.len() - off),
        });
    }
    Ok(updates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eig_check;

    fn cfg(d: usize, n: usize, seed: u64) -> StreamConfig {
        StreamConfig {
            dim: d,
            update_cols: n,
            rho: 0.95,
            decay: 2.0,
            drift: 0.001,
            seed,
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let stream = SyntheticStream::new(cfg(8, 2, 5)).unwrap();
        let a = stream.update_at(3);
        let b = stream.update_at(3);
        assert_eq!(a.entries(), b.entries());
        let again = SyntheticStream::new(cfg(8, 2, 5)).unwrap();
        assert_eq!(a.entries(), again.update_at(3).entries());
    }

    #[test]
    fn zero_drift_is_stationary() {
        // With drift = 0 the shaping operator is k-independent: the update at
        // step k is frame * diag(sigma) * z_k with only z_k varying. Check by
        // comparing against a drifting stream, which agrees only at k = 0,
        // and by comparing sample covariances far apart in k.
        let mut still = cfg(6, 2, 9);
        still.drift = 0.0;
        let mut turning = still.clone();
        turning.drift = 0.7;
        let s0 = SyntheticStream::new(still.clone()).unwrap();
        let s1 = SyntheticStream::new(turning).unwrap();
        assert_eq!(s0.update_at(0).entries(), s1.update_at(0).entries());
        assert_ne!(s0.update_at(3).entries(), s1.update_at(3).entries());

        let sample_cov = |lo: u64, hi: u64| {
            let mut cov = DenseSym::zeros(6);
            for k in lo..hi {
                cov.scale_add(1.0, &DenseSym::from_gram(&s0.update_at(k)), 1.0)
                    .unwrap();
            }
            cov.scale_add(1.0 / (hi - lo) as f64, &DenseSym::zeros(6), 0.0)
                .unwrap();
            cov
        };
        let early = sample_cov(0, 800);
        let late = sample_cov(10_000, 10_800);
        let rel = early.sub(&late).unwrap().frob_norm() / early.frob_norm();
        assert!(rel < 0.25, "stationary covariance drifted: rel = {rel}");
    }

    #[test]
    fn extreme_decay_concentrates_energy() {
        // decay -> infinity: effective rank of E[M M^T] is 1. Estimate the
        // top-eigenvalue share from a sample covariance.
        let mut c = cfg(8, 2, 11);
        c.decay = 1e6;
        c.drift = 0.0;
        let stream = SyntheticStream::new(c).unwrap();
        let mut cov = DenseSym::zeros(8);
        let draws = 10_000;
        for k in 0..draws {
            let u = stream.update_at(k);
            cov.scale_add(1.0, &DenseSym::from_gram(&u), 1.0).unwrap();
        }
        let rep = crate::linalg::symmetric_evd(&cov).unwrap();
        let top = rep.max_eig();
        let trace = cov.trace();
        assert!(top >= 0.99 * trace, "top {top}, trace {trace}");
    }

    #[test]
    fn ea_zero_update_scales_by_rho() {
        let stream = SyntheticStream::new(cfg(6, 2, 3)).unwrap();
        let state = ExactFactorState::init(stream.update_at(0));
        let next = ea_step(&state, TallThin::zeros(6, 2).unwrap(), 0.95).unwrap();
        let want = state.factor().entries() * 0.95;
        let diff = (next.factor().entries() - &want)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn ea_identity_fixed_point() {
        let mut state = ExactFactorState {
            step: 0,
            m_exact: DenseSym::identity(4),
            last_update: TallThin::zeros(4, 1).unwrap(),
        };
        // M M^T = I via M = I (treated as 4 columns of the identity).
        let eye_update = TallThin::new(Array2::eye(4)).unwrap();
        state = ea_step(&state, eye_update, 0.95).unwrap();
        let diff = (state.factor().entries() - &Array2::<f64>::eye(4))
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn closed_form_expansion_oracle() {
        // Oracle: direct summation of kappa(i) rho^(k-i) M_i M_i^T, checked
        // along the whole trajectory.
        let c = cfg(8, 2, 17);
        let stream = SyntheticStream::new(c.clone()).unwrap();
        let rho = c.rho;
        let mut state = ExactFactorState::init(stream.update_at(0));
        for k in 1..=50u64 {
            state = ea_step(&state, stream.update_at(k), rho).unwrap();
            if k % 10 != 0 {
                continue;
            }
            let mut direct = DenseSym::zeros(8);
            for i in 0..=k {
                let kappa = if i > 0 { 1.0 - rho } else { 1.0 };
                let weight = kappa * rho.powi((k - i) as i32);
                direct
                    .scale_add(1.0, &DenseSym::from_gram(&stream.update_at(i)), weight)
                    .unwrap();
            }
            let err = state.factor().sub(&direct).unwrap().frob_norm();
            assert!(err < 1e-9 * (1.0 + direct.frob_norm()), "k = {k}: {err}");
        }
    }

    #[test]
    fn trace_recursion_is_exact() {
        let c = cfg(10, 3, 23);
        let stream = SyntheticStream::new(c.clone()).unwrap();
        let mut state = ExactFactorState::init(stream.update_at(0));
        for k in 1..20 {
            let update = stream.update_at(k);
            let before = state.factor().trace();
            let unorm = update.frob_norm();
            state = ea_step(&state, update, c.rho).unwrap();
            let want = c.rho * before + (1.0 - c.rho) * unorm * unorm;
            assert!((state.factor().trace() - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn psd_invariance_along_stream() {
        let c = cfg(8, 2, 29);
        let stream = SyntheticStream::new(c.clone()).unwrap();
        let mut state = ExactFactorState::init(stream.update_at(0));
        for k in 1..30 {
            state = ea_step(&state, stream.update_at(k), c.rho).unwrap();
            let min_eig = min_eig_check(state.factor()).unwrap();
            assert!(min_eig >= -1e-10 * state.factor().frob_norm());
        }
    }

    #[test]
    fn stream_file_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("kfo_stream_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.kfst");
        let stream = SyntheticStream::new(cfg(7, 3, 31)).unwrap();
        let updates: Vec<TallThin> = (0..5).map(|k| stream.update_at(k)).collect();
        save_stream(&path, &updates).unwrap();
        let loaded = load_stream(&path).unwrap();
        assert_eq!(loaded.len(), 5);
        for (a, b) in updates.iter().zip(loaded.iter()) {
            assert_eq!(a.entries(), b.entries());
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = std::env::temp_dir().join("kfo_stream_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.kfst");
        std::fs::File::create(&path).unwrap();
        assert!(load_stream(&path).unwrap().is_empty());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn truncated_record_reports_offset() {
        let dir = std::env::temp_dir().join("kfo_stream_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.kfst");
        let stream = SyntheticStream::new(cfg(6, 2, 37)).unwrap();
        save_stream(&path, &[stream.update_at(0), stream.update_at(1)]).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 9]).unwrap();
        match load_stream(&path) {
            Err(KfoError::MalformedFile { offset, .. }) => {
                assert!(offset > 0);
            }
            other => panic!("expected MalformedFile, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
