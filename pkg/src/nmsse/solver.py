"""Trajectory integration of the linear non-Markovian stochastic equation.

One realization evolves the unnormalized system state as

    dpsi/dt = -i H psi + i L Z(t) psi + (memory term),

where the memory term stands in for the functional dependence of the
current state on earlier noise.  That dependence has no closed form for
general systems, so it is realized by one of three pluggable closures:

* ``dephasing_exact``   - exact whenever [L, H] = 0: the memory term
  collapses to -L^2 A(t) psi with A(t) = int_0^t alpha(t, s) ds.
* ``born_weak_coupling`` - lowest-order replacement using interaction-
  picture coupling operators; memory term -L D(t) psi with
  D(t) = int_0^t alpha(t, s) e^{+iH(s-t)} L e^{-iH(s-t)} ds evaluated by
  trapezoid quadrature on the grid.  An approximation; its accuracy is
  only asserted through weak-coupling scaling tests.
* ``bargmann_exact``    - numerically exact for finite T = 0 baths: the
  state is expanded in monomials of the conjugated coherent-state labels,
  which turns the noise-derivative pair into weighted raising/lowering
  maps on Fock occupations; the exposed system state is the monomial
  series evaluated at the realization's stored labels.

States are integrated by classical fixed-step RK4 and are *not*
normalized; only ensemble averages are physical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernels import rk4_linear_batch
from .model import (
    BathModel,
    KernelGrid,
    SystemModel,
    annihilation_operator,
    env_mode_operator,
)
from .noise import NoiseRealization
from .numerics import (
    SpaceLayout,
    TimeGrid,
    as_state_vector,
    fock_leak_fractions,
    fock_monomial_weights,
)

# Relative commutator bound under which the dephasing closure is exact.
COMMUTATOR_RTOL = 1e-12

# Fock truncation control for the exact closure and the reference
# propagator: warn when any mode's top-level population fraction exceeds
# the first threshold, abort above the second.
FOCK_LEAK_WARN = 1e-6
FOCK_LEAK_ERROR = 1e-3


class FockLeakError(RuntimeError):
    """Raised when population reaches the truncation edge of a mode."""


def check_fock_leak(states: np.ndarray, layout: SpaceLayout,
                    context: str) -> float:
    """Warn/raise on top-Fock-level population; returns the worst fraction."""
    worst = 0.0
    for psi in states:
        leaks = fock_leak_fractions(psi, layout)
        if leaks.size:
            worst = max(worst, float(leaks.max()))
    if worst > FOCK_LEAK_ERROR:
        raise FockLeakError(
            f"{context}: top Fock level population fraction {worst:.2e} "
            f"exceeds {FOCK_LEAK_ERROR:.0e}; raise the mode cutoffs"
        )
    if worst > FOCK_LEAK_WARN:
        warnings.warn(
            f"{context}: top Fock level population fraction {worst:.2e} "
            f"exceeds {FOCK_LEAK_WARN:.0e}",
            RuntimeWarning, stacklevel=2,
        )
    return worst


@dataclass(frozen=True)
class TrajectoryState:
    """System state at one grid time (unnormalized)."""

    t: float
    psi: np.ndarray

    @property
    def norm_sq(self) -> float:
        return float(np.real(np.vdot(self.psi, self.psi)))


def commutator_defect(sys: SystemModel) -> float:
    """|| [L, H] ||_F relative to ||L||_F ||H||_F."""
    h, l = sys.hamiltonian, sys.coupling
    num = np.linalg.norm(l @ h - h @ l)
    den = np.linalg.norm(l) * np.linalg.norm(h)
    return float(num / den) if den > 0 else 0.0


def memory_integral(bath: BathModel, t) -> np.ndarray | complex:
    """Closed-form A(t) = int_0^t alpha(t, s) ds for a discrete bath.

    Per mode: g [ (nbar+1)(1 - e^{-i w t})/(i w) - nbar (1 - e^{+i w t})/(i w) ].
    """
    t_arr = np.asarray(t, dtype=float)
    g = bath.couplings()
    w = bath.frequencies()
    nbar = bath.occupations()
    if len(g) == 0:
        out = np.zeros_like(t_arr, dtype=np.complex128)
        return complex(out) if t_arr.ndim == 0 else out
    wt = np.multiply.outer(t_arr, w)
    pos = (1.0 - np.exp(-1j * wt)) / (1j * w)
    neg = (1.0 - np.exp(+1j * wt)) / (1j * w)
    out = pos @ (g * (nbar + 1.0)) - neg @ (g * nbar)
    return complex(out) if t_arr.ndim == 0 else out


def memory_integral_cumulative(bath: BathModel, t) -> np.ndarray | complex:
    """Closed-form int_0^t A(s) ds (drives the commuting-case exponentials).

    Uses int_0^t (1 - e^{-i w s}) ds = t - (1 - e^{-i w t})/(i w) per branch.
    """
    t_arr = np.asarray(t, dtype=float)
    g = bath.couplings()
    w = bath.frequencies()
    nbar = bath.occupations()
    if len(g) == 0:
        out = np.zeros_like(t_arr, dtype=np.complex128)
        return complex(out) if t_arr.ndim == 0 else out

    def j_int(omega_signed):
        wt = np.multiply.outer(t_arr, omega_signed)
        return t_arr[..., None] - (1.0 - np.exp(-1j * wt)) / (1j * omega_signed)

    out = (j_int(w) @ (g * (nbar + 1.0) / (1j * w))
           - j_int(-w) @ (g * nbar / (1j * w)))
    return complex(out) if t_arr.ndim == 0 else out


def _grid_half_average(values_on_grid: np.ndarray) -> np.ndarray:
    """Interleave grid values with midpoint (linear) averages."""
    n = len(values_on_grid)
    out = np.empty((2 * n - 1,) + values_on_grid.shape[1:], dtype=values_on_grid.dtype)
    out[0::2] = values_on_grid
    out[1::2] = 0.5 * (values_on_grid[:-1] + values_on_grid[1:])
    return out


def _trapezoid_rows(kernel: KernelGrid, weights_fn) -> np.ndarray:
    """Row-wise cumulative trapezoid sum_k w_k K[j, k] f(j, k) over k <= j."""
    n = len(kernel.times)
    dt = kernel.dt
    out = None
    for j in range(n):
        row = kernel.values[j, : j + 1]
        w = np.full(j + 1, dt)
        if j == 0:
            w[:] = 0.0
        else:
            w[0] = w[j] = 0.5 * dt
        term = weights_fn(j, row * w)
        if out is None:
            out = np.empty((n,) + term.shape, dtype=np.complex128)
        out[j] = term
    return out


class MemoryClosure:
    """Base for the pluggable memory-term realizations."""

    kind: str = ""

    def __init__(self, sys: SystemModel):
        self.system = sys

    def validate_noise(self, noise: NoiseRealization) -> None:
        pass


class DephasingClosure(MemoryClosure):
    """Exact closure for [L, H] = 0: memory term -L^2 A(t) psi.

    Built either from a discrete bath (closed-form A) or from a tabulated
    kernel grid (trapezoid A on that grid, midpoints by linear averaging,
    matching the quadrature of the Born closure).
    """

    kind = "dephasing_exact"

    def __init__(self, sys: SystemModel, bath_or_kernel):
        super().__init__(sys)
        defect = commutator_defect(sys)
        if defect > COMMUTATOR_RTOL:
            raise ValueError(
                f"dephasing closure requires [L, H] = 0; relative commutator "
                f"norm is {defect:.3e}"
            )
        if isinstance(bath_or_kernel, BathModel):
            self.bath: BathModel | None = bath_or_kernel
            self.kernel: KernelGrid | None = None
        elif isinstance(bath_or_kernel, KernelGrid):
            self.bath = None
            self.kernel = bath_or_kernel
        else:
            raise TypeError("expected a BathModel or a KernelGrid")
        self._l2 = sys.coupling @ sys.coupling
        self._cache: dict = {}

    def memory_integral_at(self, t) -> np.ndarray | complex:
        """A(t), closed form (bath) or grid trapezoid (kernel)."""
        if self.bath is not None:
            return memory_integral(self.bath, t)
        a_grid = self._kernel_a_grid()
        t_arr = np.asarray(t, dtype=float)
        idx = np.round(t_arr / self.kernel.dt).astype(int)
        if np.any(np.abs(t_arr - idx * self.kernel.dt) > 1e-9):
            raise ValueError("tabulated closure can only evaluate A on its grid")
        return a_grid[idx]

    def _kernel_a_grid(self) -> np.ndarray:
        key = "a_grid"
        if key not in self._cache:
            self._cache[key] = _trapezoid_rows(
                self.kernel, lambda j, row: np.asarray(row.sum())
            )
        return self._cache[key]

    def stage_generator(self, grid: TimeGrid) -> np.ndarray:
        """E(t) = -iH - A(t) L^2 at all RK4 stage times."""
        key = ("stages", grid.t_max, grid.dt, len(grid.times))
        if key not in self._cache:
            if self.bath is not None:
                a_half = memory_integral(self.bath, grid.half_times())
            else:
                self._require_grid_match(grid)
                a_half = _grid_half_average(self._kernel_a_grid())
            e = (-1j * self.system.hamiltonian)[None, :, :] \
                - a_half[:, None, None] * self._l2[None, :, :]
            self._cache[key] = np.ascontiguousarray(e)
        return self._cache[key]

    def _require_grid_match(self, grid: TimeGrid) -> None:
        if len(self.kernel.times) != len(grid.times) or not np.allclose(
                self.kernel.times, grid.times, rtol=0, atol=1e-12):
            raise ValueError("kernel grid does not match the simulation grid")


class BornClosure(MemoryClosure):
    """Lowest-order closure: memory term -L D(t) psi.

    D(t_j) accumulates the kernel against the interaction-picture coupling
    L(tau) = e^{+iH tau} L e^{-iH tau} by trapezoid quadrature over the
    tabulated grid; midpoint values for the RK4 interior stages come from
    linear averaging of adjacent grid values (consistent O(dt^2)).
    """

    kind = "born_weak_coupling"

    def __init__(self, sys: SystemModel, kernel: KernelGrid):
        super().__init__(sys)
        if not isinstance(kernel, KernelGrid):
            raise TypeError("Born closure requires a tabulated KernelGrid")
        self.kernel = kernel
        self._cache: dict = {}

    def memory_matrix_grid(self) -> np.ndarray:
        """D(t_j) for every kernel grid point, shape (n, d, d)."""
        key = "d_grid"
        if key not in self._cache:
            h = self.system.hamiltonian
            l = self.system.coupling
            evals, vecs = np.linalg.eigh(h)
            l_eig = vecs.conj().T @ l @ vecs
            dt = self.kernel.dt
            n = len(self.kernel.times)
            # L(-m dt) in the H eigenbasis: entry (p, q) picks up the phase
            # e^{-i m dt (E_p - E_q)}.
            de = np.subtract.outer(evals, evals)
            phases = np.exp(-1j * dt * np.multiply.outer(np.arange(n), de))
            lt_eig = phases * l_eig[None, :, :]

            def row_term(j, weighted_row):
                return np.einsum("k,kab->ab", weighted_row, lt_eig[j::-1])

            d_eig = _trapezoid_rows(self.kernel, row_term)
            self._cache[key] = np.einsum(
                "ap,jpq,bq->jab", vecs, d_eig, vecs.conj()
            )
        return self._cache[key]

    def stage_generator(self, grid: TimeGrid) -> np.ndarray:
        key = ("stages", grid.t_max, grid.dt, len(grid.times))
        if key not in self._cache:
            if len(self.kernel.times) != len(grid.times) or not np.allclose(
                    self.kernel.times, grid.times, rtol=0, atol=1e-12):
                raise ValueError("kernel grid does not match the simulation grid")
            d_half = _grid_half_average(self.memory_matrix_grid())
            e = (-1j * self.system.hamiltonian)[None, :, :] \
                - np.einsum("ab,jbc->jac", self.system.coupling, d_half)
            self._cache[key] = np.ascontiguousarray(e)
        return self._cache[key]


class BargmannClosure(MemoryClosure):
    """Numerically exact closure for T = 0 discrete baths.

    Integrates the coefficient equation

        dc/dt = -i (H (x) I) c
                + i sum_i kappa_i [ e^{+i w_i t} (L (x) a_i^dag)
                                   + e^{-i w_i t} (L (x) a_i) ] c

    on the truncated system (x) Fock space; the coefficients do not depend
    on the noise sample, so the integration is cached per (grid, psi0) and
    each realization only pays for evaluating the monomial series at its
    stored coherent labels.
    """

    kind = "bargmann_exact"

    def __init__(self, sys: SystemModel, bath: BathModel, layout: SpaceLayout):
        super().__init__(sys)
        if bath.temperature != 0.0:
            raise ValueError("Bargmann closure requires a zero-temperature bath")
        if layout.n_modes != bath.n_modes:
            raise ValueError("layout mode count does not match the bath")
        if layout.system_dim != sys.dim:
            raise ValueError("layout system dimension does not match the system")
        self.bath = bath
        self.layout = layout
        eye_env = np.eye(layout.env_dim, dtype=np.complex128)
        self._m0 = -1j * np.kron(sys.hamiltonian, eye_env)
        self._raising = []
        self._lowering = []
        for i in range(bath.n_modes):
            a = annihilation_operator(layout.mode_dims[i])
            self._lowering.append(np.kron(sys.coupling, env_mode_operator(layout, i, a)))
            self._raising.append(np.kron(sys.coupling,
                                         env_mode_operator(layout, i, a.conj().T)))
        self._cache: dict = {}

    def validate_noise(self, noise: NoiseRealization) -> None:
        if noise.coherent_sample is None:
            raise ValueError(
                "Bargmann closure needs mode-sum provenance (stored coherent "
                "amplitudes); use the T = 0 mode-sum noise strategy"
            )
        if len(noise.coherent_sample) != self.bath.n_modes:
            raise ValueError("coherent sample size does not match the bath")

    def _rhs(self, t: float, phi: np.ndarray) -> np.ndarray:
        out = self._m0 @ phi
        for i, mode in enumerate(self.bath.modes):
            c = 1j * mode.kappa
            out += (c * np.exp(1j * mode.omega * t)) * (self._raising[i] @ phi)
            out += (c * np.exp(-1j * mode.omega * t)) * (self._lowering[i] @ phi)
        return out

    def prepare(self, grid: TimeGrid, psi0_sys: np.ndarray) -> np.ndarray:
        """Integrate (and cache) the full coefficient trajectory (T, D)."""
        psi0_sys = as_state_vector(psi0_sys, "psi0")
        key = (grid.t_max, grid.dt, len(grid.times), psi0_sys.tobytes())
        if key not in self._cache:
            phi = np.zeros(self.layout.total_dim, dtype=np.complex128)
            phi.reshape(self.layout.system_dim, self.layout.env_dim)[:, 0] = psi0_sys
            out = np.empty((len(grid.times), self.layout.total_dim),
                           dtype=np.complex128)
            out[0] = phi
            dt = grid.dt
            for j, t in enumerate(grid.times[:-1]):
                k1 = self._rhs(t, phi)
                k2 = self._rhs(t + 0.5 * dt, phi + 0.5 * dt * k1)
                k3 = self._rhs(t + 0.5 * dt, phi + 0.5 * dt * k2)
                k4 = self._rhs(t + dt, phi + dt * k3)
                phi = phi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                out[j + 1] = phi
            if not np.all(np.isfinite(out.view(np.float64))):
                raise RuntimeError("Bargmann integration produced NaN/Inf")
            check_fock_leak(out, self.layout, "bargmann closure")
            self._cache[key] = out
        return self._cache[key]

    def monomial_weights(self, amplitudes: np.ndarray) -> np.ndarray:
        """u_n(a^*) = prod_i (a_i^*)^{n_i} / sqrt(n_i!) over the env index."""
        return fock_monomial_weights(
            self.layout, np.conj(np.asarray(amplitudes, dtype=np.complex128))
        )

    def expose(self, full_states: np.ndarray, amplitudes: np.ndarray) -> np.ndarray:
        """Evaluate the monomial series at the given labels -> (T, d)."""
        w = self.monomial_weights(np.asarray(amplitudes, dtype=np.complex128))
        t_len = full_states.shape[0]
        resh = full_states.reshape(t_len, self.layout.system_dim, self.layout.env_dim)
        return resh @ w


def run_trajectory(sys: SystemModel, closure: MemoryClosure,
                   noise: NoiseRealization, grid: TimeGrid,
                   psi0: np.ndarray) -> list[TrajectoryState]:
    """Integrate one realization; returns unnormalized states per grid time."""
    states = run_trajectory_batch(sys, closure, [noise], grid, psi0)[0]
    return [TrajectoryState(t=float(t), psi=states[j])
            for j, t in enumerate(grid.times)]


def run_trajectory_batch(sys: SystemModel, closure: MemoryClosure,
                         noises, grid: TimeGrid,
                         psi0: np.ndarray) -> np.ndarray:
    """Integrate a batch of realizations -> array (B, T, system_dim)."""
    if closure.system is not sys and not (
            np.array_equal(closure.system.hamiltonian, sys.hamiltonian)
            and np.array_equal(closure.system.coupling, sys.coupling)):
        raise ValueError("closure was built for a different system model")
    psi0 = as_state_vector(psi0, "psi0")
    if len(psi0) != sys.dim:
        raise ValueError("psi0 dimension does not match the system")
    noises = list(noises)
    for nz in noises:
        if len(nz.times) != len(grid.times) or not np.allclose(
                nz.times, grid.times, rtol=0, atol=1e-12):
            raise ValueError("noise grid does not match the simulation grid")
        closure.validate_noise(nz)

    if isinstance(closure, BargmannClosure):
        full = closure.prepare(grid, psi0)
        out = np.empty((len(noises), len(grid.times), sys.dim),
                       dtype=np.complex128)
        for b, nz in enumerate(noises):
            out[b] = closure.expose(full, nz.coherent_sample)
        return out

    e_half = closure.stage_generator(grid)
    z_half = np.stack([nz.stage_values(grid) for nz in noises])
    out = rk4_linear_batch(e_half, sys.coupling, z_half, psi0, grid.dt)
    if not np.all(np.isfinite(out.view(np.float64))):
        raise RuntimeError(
            "trajectory integration produced NaN/Inf (dt too large or an "
            "invalid kernel)"
        )
    return out


def closure_dephasing(sys: SystemModel, bath_or_kernel) -> DephasingClosure:
    return DephasingClosure(sys, bath_or_kernel)


def closure_born(sys: SystemModel, kernel: KernelGrid) -> BornClosure:
    return BornClosure(sys, kernel)


def closure_bargmann(sys: SystemModel, bath: BathModel,
                     layout: SpaceLayout) -> BargmannClosure:
    return BargmannClosure(sys, bath, layout)
