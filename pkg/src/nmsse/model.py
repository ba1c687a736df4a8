"""Physical model: system, discrete bosonic bath, and the memory kernel.

The bath couples to the system linearly through a Hermitian operator L
(position-like in the canonical presentation) with

    H_tot = H_sys (x) I  -  sum_i kappa_i L (x) (a_i + a_i^dag)
                         +  sum_i omega_i I (x) a_i^dag a_i,

kappa_i = sqrt(g_i).  Mode zero-point energies are dropped everywhere;
they only contribute a global phase, and every consumer of this module
uses the same convention.

The bath force correlation function on a thermal state at temperature T is

    alpha(t, s) = sum_i g_i [ coth(omega_i / 2T) cos(omega_i (t-s))
                              - i sin(omega_i (t-s)) ]
                = sum_i g_i [ (nbar_i + 1) e^{-i omega_i (t-s)}
                              + nbar_i e^{+i omega_i (t-s)} ],

with nbar_i = 1/(e^{omega_i/T} - 1); at T = 0 it reduces to
sum_i g_i e^{-i omega_i (t-s)}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DEFAULT_DIM_CAP,
    SpaceLayout,
    TimeGrid,
    as_state_vector,
    require_hermitian,
    tensor_product,
)

# Relative eigenvalue floor distinguishing roundoff from a genuinely
# indefinite (hence invalid) correlation kernel.
KERNEL_PSD_RTOL = 1e-12


@dataclass(frozen=True)
class SystemModel:
    """Finite-dimensional system: Hamiltonian plus Hermitian coupling operator."""

    hamiltonian: np.ndarray
    coupling: np.ndarray

    def __post_init__(self):
        h = require_hermitian(self.hamiltonian, "hamiltonian")
        l = require_hermitian(self.coupling, "coupling")
        if h.shape != l.shape:
            raise ValueError("hamiltonian and coupling dimensions differ")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "coupling", l)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


@dataclass(frozen=True)
class BathMode:
    """One bosonic mode: effective coupling g = chi^2/(2 m omega) and frequency."""

    g: float
    omega: float

    def __post_init__(self):
        if not (self.g > 0 and math.isfinite(self.g)):
            raise ValueError(f"mode coupling g must be positive, got {self.g}")
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError(f"mode frequency must be positive, got {self.omega}")

    @property
    def kappa(self) -> float:
        return math.sqrt(self.g)


@dataclass(frozen=True)
class BathModel:
    """A finite set of bosonic modes in a thermal state at temperature T >= 0."""

    modes: tuple
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if any(not isinstance(m, BathMode) for m in self.modes):
            raise TypeError("modes must be BathMode instances")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def couplings(self) -> np.ndarray:
        return np.array([m.g for m in self.modes])

    def frequencies(self) -> np.ndarray:
        return np.array([m.omega for m in self.modes])

    def occupations(self) -> np.ndarray:
        """Bose-Einstein nbar per mode; exactly zero on the T = 0 branch."""
        if self.temperature == 0.0:
            return np.zeros(self.n_modes)
        x = self.frequencies() / self.temperature
        return 1.0 / np.expm1(x)


@dataclass(frozen=True)
class KernelGrid:
    """Tabulated correlation kernel K[j, k] = alpha(t_j, t_k) on a uniform grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        k = np.asarray(self.values, dtype=np.complex128)
        if t.ndim != 1 or len(t) < 1:
            raise ValueError("times must be a nonempty 1-D grid")
        if len(t) > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
                raise ValueError("kernel grid must be uniform and increasing")
        if k.shape != (len(t), len(t)):
            raise ValueError(f"kernel values must be {len(t)}x{len(t)}, got {k.shape}")
        require_hermitian(k, "kernel matrix", rtol=1e-9)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", k)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def covariance(self) -> np.ndarray:
        """Target noise covariance C[j, k] = E[Z(t_j) Z*(t_k)] = conj(alpha)."""
        return np.conj(self.values)

    def check_psd(self) -> np.ndarray:
        """Eigenvalues of the covariance, clipped at the roundoff floor.

        Raises if any eigenvalue is negative beyond KERNEL_PSD_RTOL x max,
        which signals an inconsistent hand-supplied kernel.
        """
        lam = np.linalg.eigvalsh(self.covariance())
        lam_max = float(lam[-1]) if lam.size else 0.0
        if lam_max <= 0.0:
            if lam.size and lam[0] < -1e-14:
                raise ValueError("kernel covariance is negative definite")
            return np.zeros_like(lam)
        floor = -KERNEL_PSD_RTOL * lam_max
        if np.any(lam < floor):
            raise ValueError(
                f"kernel covariance not PSD: min eigenvalue {lam.min():.3e} "
                f"below tolerance {floor:.3e}"
            )
        return np.clip(lam, 0.0, None)


def kernel_alpha(bath: BathModel, t, s) -> complex | np.ndarray:
    """Memory kernel alpha(t, s); broadcasts over array-valued t, s."""
    tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    g = bath.couplings()
    w = bath.frequencies()
    nbar = bath.occupations()
    phase = np.exp(-1j * np.multiply.outer(tau, w))
    total = phase @ (g * (nbar + 1.0)) + np.conj(phase) @ (g * nbar)
    if np.ndim(tau) == 0:
        return complex(total)
    return total


def tabulate_kernel(bath: BathModel, grid: TimeGrid) -> KernelGrid:
    """Evaluate the kernel on a grid and validate the KernelGrid invariants."""
    t = grid.times
    if bath.n_modes == 0:
        k = np.zeros((len(t), len(t)), dtype=np.complex128)
    else:
        k = kernel_alpha(bath, t[:, None], t[None, :])
    kg = KernelGrid(times=t, values=k)
    kg.check_psd()
    return kg


def _single_mode_ops(n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncated annihilation operator and number operator."""
    a = np.zeros((n_levels, n_levels), dtype=np.complex128)
    n = np.arange(1, n_levels)
    a[n - 1, n] = np.sqrt(n)
    return a, np.diag(np.arange(n_levels).astype(np.complex128))


def annihilation_operator(n_levels: int) -> np.ndarray:
    return _single_mode_ops(n_levels)[0]


def build_total_hamiltonian(sys: SystemModel, bath: BathModel,
                            layout: SpaceLayout,
                            dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    """Dense truncated H_tot; zero-point energies dropped."""
    if layout.n_modes != bath.n_modes:
        raise ValueError(
            f"layout has {layout.n_modes} modes but bath has {bath.n_modes}"
        )
    if layout.system_dim != sys.dim:
        raise ValueError("layout system dimension does not match the system model")
    if layout.total_dim > dim_cap:
        raise ValueError(f"total dimension {layout.total_dim} exceeds cap {dim_cap}")

    env_eye = np.eye(layout.env_dim, dtype=np.complex128)
    h = tensor_product(sys.hamiltonian, env_eye, dim_cap)
    for i, mode in enumerate(bath.modes):
        a, num = _single_mode_ops(layout.mode_dims[i])
        x = a + a.conj().T
        coupling_i = np.kron(sys.coupling, env_mode_operator(layout, i, x))
        number_i = np.kron(np.eye(sys.dim, dtype=np.complex128),
                           env_mode_operator(layout, i, num))
        h += -mode.kappa * coupling_i + mode.omega * number_i
    return 0.5 * (h + h.conj().T)


def env_mode_operator(layout: SpaceLayout, index: int, op: np.ndarray) -> np.ndarray:
    """Embed a single-mode operator into the environment factor space."""
    out = np.ones((1, 1), dtype=np.complex128)
    for i, nd in enumerate(layout.mode_dims):
        factor = op if i == index else np.eye(nd, dtype=np.complex128)
        out = np.kron(out, factor)
    return out


def markov_reference_bath(gamma: float, n_modes: int, omega_max: float) -> BathModel:
    """Dense frequency comb whose kernel approximates gamma * delta(t - s).

    Construction: omega_k = k * domega for k = 1..n_modes with
    domega = omega_max / n_modes, and g_k = gamma * domega / pi.  With this
    normalization the half-range integral A(t) = int_0^t alpha(tau) dtau
    approaches gamma/2 + i * (lamb-shift part) for t between the kernel
    correlation time ~1/omega_max and the recurrence time 2*pi/domega, and
    the comb ensemble matches the Lindblad equation

        drho/dt = -i[H, rho] + gamma (L rho L - (L^2 rho + rho L^2)/2)

    with the *same* gamma.  The comb is a modeling choice validated through
    that comparison, not a uniquely defined limit.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    domega = omega_max / n_modes
    g = gamma * domega / math.pi
    modes = tuple(BathMode(g=g, omega=k * domega) for k in range(1, n_modes + 1))
    return BathModel(modes=modes, temperature=0.0)


def recurrence_time(bath: BathModel) -> float:
    """Shortest quasi-period 2*pi/min-frequency-spacing of a discrete bath."""
    w = np.sort(bath.frequencies())
    if len(w) == 0:
        return math.inf
    if len(w) == 1:
        return 2.0 * math.pi / w[0]
    gaps = np.diff(w)
    gaps = gaps[gaps > 1e-12]
    spacing = float(gaps.min()) if len(gaps) else w[0]
    return 2.0 * math.pi / spacing
