#!/usr/bin/env python3
"""Smoke test for the kfo_py extension module.

Builds nothing itself: compile the module first with

    cargo build -p kfo-py --release   (or without --release)

then run

    python3 python/smoke_test.py
"""

import importlib.util
import pathlib
import sys

import numpy as np


def load_module():
    root = pathlib.Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "libkfo_py.so",
        root / "target" / "debug" / "libkfo_py.so",
        root / "target" / "release" / "kfo_py.dll",
        root / "target" / "debug" / "kfo_py.dll",
        root / "target" / "release" / "libkfo_py.dylib",
        root / "target" / "debug" / "libkfo_py.dylib",
    ]
    for path in candidates:
        if path.exists():
            spec = importlib.util.spec_from_file_location("kfo_py", path)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("kfo_py extension not found; run `cargo build -p kfo-py` first")


def main():
    kfo = load_module()
    rng = np.random.default_rng(7)
    checks = 0

    # Eigendecomposition reconstructs and matches numpy.
    b = rng.standard_normal((24, 6))
    m = b @ b.T
    u, d = kfo.evd(m)
    assert np.allclose(u @ np.diag(d) @ u.T, m, atol=1e-9 * (1 + np.linalg.norm(m)))
    np_vals = np.sort(np.linalg.eigvalsh(m))[::-1]
    assert np.allclose(d, np.clip(np_vals, 0.0, None), atol=1e-8)
    checks += 1

    # Online symmetric update equals a dense recomputation.
    u3, d3 = kfo.truncate(u, d, 4)
    a = rng.standard_normal((24, 3))
    u_new, d_new = kfo.brand_sym(u3, d3, a)
    dense = u3 @ np.diag(d3) @ u3.T + a @ a.T
    assert np.allclose(u_new @ np.diag(d_new) @ u_new.T, dense, atol=1e-9 * np.linalg.norm(dense))
    checks += 1

    # Randomized sketch captures an exactly low-rank matrix.
    us, ds = kfo.rsvd(m, 6, r_o=8, n_pwr=2, seed=3)
    assert np.linalg.norm(us @ np.diag(ds) @ us.T - m) <= 1e-7 * np.linalg.norm(m)
    checks += 1

    # Inverse application agrees with a dense solve.
    lam = 0.5
    j = rng.standard_normal((24, 5))
    out = kfo.apply_inverse(u, d, lam, j, side="left")
    want = np.linalg.solve(m + lam * np.eye(24), j)
    assert np.allclose(out, want, atol=1e-9 * (1 + np.abs(want).max()))
    checks += 1

    # Factored application equals preconditioning the dense gradient.
    g = rng.standard_normal((24, 4))
    a2 = rng.standard_normal((24, 4))
    fast = kfo.apply_inverse_linear(u, d, u, d, lam, lam, g, a2)
    grad = g @ a2.T
    slow = np.linalg.solve(m + lam * np.eye(24), grad) @ np.linalg.inv(m + lam * np.eye(24))
    assert np.allclose(fast, slow, atol=1e-8 * (1 + np.abs(slow).max()))
    checks += 1

    # A maintained low-rank view tracks a drifting stream far better than a
    # frozen one.
    online = kfo.Maintainer("b-kfac", d=48, r=10, n_bs=4, drift=0.05, seed=11)
    frozen = kfo.Maintainer("r-kfac", d=48, r=10, n_bs=4, drift=0.05, seed=11, period=10_000)
    online.step(40)
    frozen.step(40)
    assert online.step_index == 40
    assert online.rep_error() < frozen.rep_error(), (
        online.rep_error(),
        frozen.rep_error(),
    )
    u_m, d_m = online.rep()
    assert u_m.shape[0] == 48 and d_m.ndim == 1
    checks += 1

    print(f"kfo_py smoke test: {checks} checks passed")


if __name__ == "__main__":
    main()
