//! Python bindings: the symmetric online decomposition update, randomized
//! sketching, regularized inverse application, and a self-contained
//! maintainer driving a synthetic factor stream.

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use kfo_core::brand;
use kfo_core::linalg::{self, DenseSym, LowRankSpsd, TallThin};
use kfo_core::maintainers::{
    self, LambdaMode, MaintainerState, RegularizedInverse, Side, StepInputs, Strategy,
};
use kfo_core::stream::{ea_step, ExactFactorState, StreamConfig, SyntheticStream};
use kfo_core::KfoError;

fn err(e: KfoError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// An `(U, D)` pair handed back to Python.
type RepParts<'py> = (Bound<'py, PyArray2<f64>>, Bound<'py, PyArray1<f64>>);

fn rep_from_parts(
    u: PyReadonlyArray2<'_, f64>,
    d: PyReadonlyArray1<'_, f64>,
) -> PyResult<LowRankSpsd> {
    LowRankSpsd::new(u.as_array().to_owned(), d.as_array().to_owned()).map_err(err)
}

fn rep_to_parts<'py>(py: Python<'py>, rep: &LowRankSpsd) -> RepParts<'py> {
    (
        rep.basis().clone().into_pyarray(py),
        rep.eigvals().clone().into_pyarray(py),
    )
}

fn dense_from(m: PyReadonlyArray2<'_, f64>) -> PyResult<DenseSym> {
    DenseSym::new(m.as_array().to_owned()).map_err(err)
}

fn tall_from(m: PyReadonlyArray2<'_, f64>) -> PyResult<TallThin> {
    TallThin::new(m.as_array().to_owned()).map_err(err)
}

/// Full symmetric eigendecomposition; returns `(U, D)` sorted by
/// non-increasing eigenvalue.
#[pyfunction]
fn evd<'py>(py: Python<'py>, m: PyReadonlyArray2<'py, f64>) -> PyResult<RepParts<'py>> {
    let rep = linalg::symmetric_evd(&dense_from(m)?).map_err(err)?;
    Ok(rep_to_parts(py, &rep))
}

/// Randomized rank-`r` approximation of a symmetric PSD matrix.
#[pyfunction]
#[pyo3(signature = (m, r, r_o = 10, n_pwr = 4, seed = 0))]
fn rsvd<'py>(
    py: Python<'py>,
    m: PyReadonlyArray2<'py, f64>,
    r: usize,
    r_o: usize,
    n_pwr: usize,
    seed: u64,
) -> PyResult<RepParts<'py>> {
    let rep = linalg::rsvd_spsd(&dense_from(m)?, r, r_o, n_pwr, seed).map_err(err)?;
    Ok(rep_to_parts(py, &rep))
}

/// Exact eigendecomposition of `U diag(D) U^T + A A^T` via the symmetric
/// online update.
#[pyfunction]
fn brand_sym<'py>(
    py: Python<'py>,
    u: PyReadonlyArray2<'py, f64>,
    d: PyReadonlyArray1<'py, f64>,
    a: PyReadonlyArray2<'py, f64>,
) -> PyResult<RepParts<'py>> {
    let rep = rep_from_parts(u, d)?;
    let update = tall_from(a)?;
    let out = brand::symmetric_brand(&rep, &update).map_err(err)?;
    Ok(rep_to_parts(py, &out))
}

/// Keeps the leading `r` modes of `(U, D)`.
#[pyfunction]
fn truncate<'py>(
    py: Python<'py>,
    u: PyReadonlyArray2<'py, f64>,
    d: PyReadonlyArray1<'py, f64>,
    r: usize,
) -> PyResult<RepParts<'py>> {
    let rep = rep_from_parts(u, d)?;
    Ok(rep_to_parts(py, &linalg::truncate(&rep, r)))
}

fn inverse_from(
    u: PyReadonlyArray2<'_, f64>,
    d: PyReadonlyArray1<'_, f64>,
    lam: f64,
    continuation: bool,
) -> PyResult<RegularizedInverse> {
    let rep = rep_from_parts(u, d)?;
    maintainers::make_reg_inverse(&rep, LambdaMode::Fixed(lam), continuation).map_err(err)
}

/// Applies `(U diag(D) U^T + lam I)^-1` to `j` from the given side
/// ("left" or "right") without densifying.
#[pyfunction]
#[pyo3(signature = (u, d, lam, j, side = "left", continuation = false))]
fn apply_inverse<'py>(
    py: Python<'py>,
    u: PyReadonlyArray2<'py, f64>,
    d: PyReadonlyArray1<'py, f64>,
    lam: f64,
    j: PyReadonlyArray2<'py, f64>,
    side: &str,
    continuation: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let inv = inverse_from(u, d, lam, continuation)?;
    let side = match side {
        "left" => Side::Left,
        "right" => Side::Right,
        other => {
            return Err(PyValueError::new_err(format!(
                "side must be left|right, got {other}"
            )))
        }
    };
    let out = inv.apply(&j.as_array().to_owned(), side).map_err(err)?;
    Ok(out.into_pyarray(py))
}

/// Preconditions a factored gradient `G A^T` in time linear in the factor
/// heights: `(invG G)(A^T invA)`.
#[pyfunction]
#[pyo3(signature = (ug, dg, ua, da, lam_g, lam_a, g, a, continuation = false))]
#[allow(clippy::too_many_arguments)]
fn apply_inverse_linear<'py>(
    py: Python<'py>,
    ug: PyReadonlyArray2<'py, f64>,
    dg: PyReadonlyArray1<'py, f64>,
    ua: PyReadonlyArray2<'py, f64>,
    da: PyReadonlyArray1<'py, f64>,
    lam_g: f64,
    lam_a: f64,
    g: PyReadonlyArray2<'py, f64>,
    a: PyReadonlyArray2<'py, f64>,
    continuation: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let inv_g = inverse_from(ug, dg, lam_g, continuation)?;
    let inv_a = inverse_from(ua, da, lam_a, continuation)?;
    let out = maintainers::apply_inverse_linear(&inv_g, &inv_a, &tall_from(g)?, &tall_from(a)?)
        .map_err(err)?;
    Ok(out.into_pyarray(py))
}

/// A maintenance strategy bound to its own synthetic factor stream.
///
/// Each `step()` draws the next update, advances the exact exponentially
/// averaged factor, and lets the strategy update its low-rank view.
#[pyclass]
struct Maintainer {
    stream: SyntheticStream,
    exact: ExactFactorState,
    state: MaintainerState,
    rho: f64,
}

#[pymethods]
impl Maintainer {
    #[new]
    #[pyo3(signature = (strategy, d, r, n_bs = 8, rho = 0.95, decay = 4.0, drift = 0.01, seed = 0, period = 1, t_rsvd = 5, t_corct = 5, phi_crc = 0.5, r_o = 10, n_pwr = 4))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        strategy: &str,
        d: usize,
        r: usize,
        n_bs: usize,
        rho: f64,
        decay: f64,
        drift: f64,
        seed: u64,
        period: u64,
        t_rsvd: u64,
        t_corct: u64,
        phi_crc: f64,
        r_o: usize,
        n_pwr: usize,
    ) -> PyResult<Self> {
        let strategy = match strategy {
            "exact-kfac" => Strategy::ExactKfac { t_inv: period },
            "r-kfac" => Strategy::RKfac {
                t_inv: period,
                r,
                r_o,
                n_pwr,
            },
            "b-kfac" => Strategy::BKfac { t_brand: period, r },
            "b-r-kfac" => Strategy::BRKfac {
                t_brand: period,
                t_rsvd,
                r,
                r_o,
                n_pwr,
            },
            "b-kfac-c" => Strategy::BKfacC {
                t_brand: period,
                t_corct,
                phi_crc,
                r,
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown strategy {other:?}; use exact-kfac|r-kfac|b-kfac|b-r-kfac|b-kfac-c"
                )))
            }
        };
        let cfg = StreamConfig {
            dim: d,
            update_cols: n_bs,
            rho,
            decay,
            drift,
            seed,
        };
        let stream = SyntheticStream::new(cfg).map_err(err)?;
        let exact = ExactFactorState::init(stream.update_at(0));
        let state = MaintainerState::init(strategy, exact.last_update(), exact.factor(), seed)
            .map_err(err)?;
        Ok(Self {
            stream,
            exact,
            state,
            rho,
        })
    }

    /// Advances the stream and the maintainer by `n` steps.
    #[pyo3(signature = (n = 1))]
    fn step(&mut self, n: u64) -> PyResult<()> {
        for _ in 0..n {
            let k = self.exact.step() + 1;
            let update = self.stream.update_at(k);
            let next = ea_step(&self.exact, update.clone(), self.rho).map_err(err)?;
            self.state
                .step(StepInputs {
                    update: &update,
                    prev_factor: self.exact.factor(),
                    curr_factor: next.factor(),
                    rho: self.rho,
                })
                .map_err(err)?;
            self.exact = next;
        }
        Ok(())
    }

    #[getter]
    fn step_index(&self) -> u64 {
        self.exact.step()
    }

    /// Current low-rank view as `(U, D)`.
    fn rep<'py>(&self, py: Python<'py>) -> RepParts<'py> {
        rep_to_parts(py, self.state.rep())
    }

    /// Current exact factor as a dense array.
    fn exact_factor<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.exact.factor().entries().clone().into_pyarray(py)
    }

    /// Relative Frobenius error of the maintained view against the exact
    /// factor.
    fn rep_error(&self) -> PyResult<f64> {
        let diff = self
            .exact
            .factor()
            .sub(&self.state.rep().densify())
            .map_err(err)?;
        Ok(diff.frob_norm() / self.exact.factor().frob_norm().max(f64::MIN_POSITIVE))
    }
}

#[pymodule]
fn kfo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evd, m)?)?;
    m.add_function(wrap_pyfunction!(rsvd, m)?)?;
    m.add_function(wrap_pyfunction!(brand_sym, m)?)?;
    m.add_function(wrap_pyfunction!(truncate, m)?)?;
    m.add_function(wrap_pyfunction!(apply_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(apply_inverse_linear, m)?)?;
    m.add_class::<Maintainer>()?;
    Ok(())
}
