"""Hot numeric kernels: batched fixed-step RK4 for linear trajectory ODEs.

Every stochastic trajectory integrates

    dpsi/dt = E(t) psi + i Z(t) L psi

with E(t) the (closure-specific) deterministic generator tabulated at all
RK4 stage times and Z(t) the per-trajectory noise at the same stage times.
Integrating 10^4+ such trajectories dominates the runtime of every
ensemble experiment, so the inner loop is JIT-compiled with numba.

A pure-numpy implementation (vectorized across the batch) provides a
fallback; set the environment variable ``NMSSE_NO_NUMBA=1`` before import
to select it, or call :func:`set_backend` at runtime.  Both paths compute
the same RK4 recurrence; results agree to floating-point reassociation.
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

_ENV_DISABLED = os.environ.get("NMSSE_NO_NUMBA", "").strip() in {"1", "true", "yes"}
_backend = "numpy" if (_ENV_DISABLED or not NUMBA_AVAILABLE) else "numba"


def backend() -> str:
    """Currently selected kernel backend, ``"numba"`` or ``"numpy"``."""
    return _backend


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the previous one."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not importable in this environment")
    previous = _backend
    _backend = name
    return previous


def _rk4_numpy(e_half: np.ndarray, coupling: np.ndarray, z_half: np.ndarray,
               psi0: np.ndarray, dt: float) -> np.ndarray:
    n_steps = (e_half.shape[0] - 1) // 2
    batch, dim = psi0.shape
    out = np.empty((batch, n_steps + 1, dim), dtype=np.complex128)
    out[:, 0, :] = psi0
    lt = coupling.T.copy()
    et = np.swapaxes(e_half, 1, 2)
    psi = psi0.copy()
    for j in range(n_steps):
        z0 = z_half[:, 2 * j, None]
        z1 = z_half[:, 2 * j + 1, None]
        z2 = z_half[:, 2 * j + 2, None]
        e0, e1, e2 = et[2 * j], et[2 * j + 1], et[2 * j + 2]
        k1 = psi @ e0 + 1j * z0 * (psi @ lt)
        y = psi + (0.5 * dt) * k1
        k2 = y @ e1 + 1j * z1 * (y @ lt)
        y = psi + (0.5 * dt) * k2
        k3 = y @ e1 + 1j * z1 * (y @ lt)
        y = psi + dt * k3
        k4 = y @ e2 + 1j * z2 * (y @ lt)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, j + 1, :] = psi
    return out


if NUMBA_AVAILABLE:

    @njit(cache=True, nogil=True, inline="always")
    def _stage_at(e_half, coupling, z, y, k, h):  # pragma: no cover
        dim = coupling.shape[0]
        for i in range(dim):
            acc = 0.0 + 0.0j
            lacc = 0.0 + 0.0j
            for m in range(dim):
                acc += e_half[h, i, m] * y[m]
                lacc += coupling[i, m] * y[m]
            k[i] = acc + 1j * z * lacc

    @njit(cache=True, nogil=True)
    def _rk4_numba(e_half, coupling, z_half, psi0, dt, out):  # pragma: no cover
        batch = psi0.shape[0]
        dim = psi0.shape[1]
        n_steps = (e_half.shape[0] - 1) // 2
        k1 = np.empty(dim, np.complex128)
        k2 = np.empty(dim, np.complex128)
        k3 = np.empty(dim, np.complex128)
        k4 = np.empty(dim, np.complex128)
        y = np.empty(dim, np.complex128)
        for b in range(batch):
            for i in range(dim):
                out[b, 0, i] = psi0[b, i]
            for j in range(n_steps):
                h0 = 2 * j
                h1 = 2 * j + 1
                h2 = 2 * j + 2
                psi = out[b, j]
                _stage_at(e_half, coupling, z_half[b, h0], psi, k1, h0)
                for i in range(dim):
                    y[i] = psi[i] + 0.5 * dt * k1[i]
                _stage_at(e_half, coupling, z_half[b, h1], y, k2, h1)
                for i in range(dim):
                    y[i] = psi[i] + 0.5 * dt * k2[i]
                _stage_at(e_half, coupling, z_half[b, h1], y, k3, h1)
                for i in range(dim):
                    y[i] = psi[i] + dt * k3[i]
                _stage_at(e_half, coupling, z_half[b, h2], y, k4, h2)
                for i in range(dim):
                    out[b, j + 1, i] = psi[i] + (dt / 6.0) * (
                        k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]
                    )
        return out


def rk4_linear_batch(e_half: np.ndarray, coupling: np.ndarray,
                     z_half: np.ndarray, psi0: np.ndarray,
                     dt: float) -> np.ndarray:
    """Integrate a batch of trajectories; returns states (B, n_steps+1, d).

    ``e_half`` has shape (2*n_steps + 1, d, d): the deterministic generator
    at every stage time.  ``z_half`` has shape (B, 2*n_steps + 1).
    ``psi0`` is (d,) (shared initial state) or (B, d).
    """
    e_half = np.ascontiguousarray(e_half, dtype=np.complex128)
    coupling = np.ascontiguousarray(coupling, dtype=np.complex128)
    z_half = np.ascontiguousarray(np.atleast_2d(z_half), dtype=np.complex128)
    batch = z_half.shape[0]
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.ndim == 1:
        psi0 = np.broadcast_to(psi0, (batch, psi0.shape[0]))
    psi0 = np.ascontiguousarray(psi0)
    if psi0.shape[0] != batch:
        raise ValueError("psi0 batch size does not match noise batch size")
    if e_half.shape[0] != z_half.shape[1]:
        raise ValueError("stage counts of E(t) and Z(t) disagree")

    if _backend == "numba":
        n_steps = (e_half.shape[0] - 1) // 2
        out = np.empty((batch, n_steps + 1, psi0.shape[1]), dtype=np.complex128)
        _rk4_numba(e_half, coupling, z_half, psi0, float(dt), out)
        return out
    return _rk4_numpy(e_half, coupling, z_half, psi0, float(dt))
