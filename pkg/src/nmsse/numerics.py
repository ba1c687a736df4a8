"""Dense complex linear algebra shared by the whole package.

Everything here operates on plain ``numpy`` arrays of ``complex128``.
Units are fixed package-wide: hbar = k_B = 1, all frequencies/energies in
one arbitrary unit, times in its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Largest Kronecker-product dimension we are willing to build.  Anything
# bigger signals an infeasible Fock cutoff rather than a legitimate run.
DEFAULT_DIM_CAP = 32768

# Relative tolerance for Hermiticity checks (accumulated integrator error).
HERMITICITY_RTOL = 1e-9

# Eigenvalues below this magnitude are treated as exact zeros.
EIGENVALUE_CLIP = 1e-14


class DimensionCapError(ValueError):
    """Raised when a tensor-product space exceeds the configured cap."""


def as_complex_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D complex128 array, raising on bad input."""
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError(f"{name} contains NaN/Inf entries")
    return arr


def as_state_vector(v, name: str = "state") -> np.ndarray:
    arr = np.asarray(v, dtype=np.complex128).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise ValueError(f"{name} contains NaN/Inf amplitudes")
    return arr


def hermiticity_defect(m: np.ndarray) -> float:
    """Max-abs asymmetry |M - M^dagger| (absolute, not relative)."""
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def is_hermitian(m: np.ndarray, rtol: float = HERMITICITY_RTOL) -> bool:
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    return hermiticity_defect(m) <= rtol * max(scale, 1e-300)


def require_hermitian(m: np.ndarray, name: str = "matrix",
                      rtol: float = HERMITICITY_RTOL) -> np.ndarray:
    arr = as_complex_matrix(m, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if not is_hermitian(arr, rtol):
        scale = max(float(np.max(np.abs(arr))), 1e-300)
        raise ValueError(
            f"{name} is not Hermitian: max asymmetry "
            f"{hermiticity_defect(arr):.3e} exceeds {rtol:.1e} x {scale:.3e}"
        )
    return arr


@dataclass(frozen=True)
class SpaceLayout:
    """Index bookkeeping for system (x) bath-mode tensor spaces.

    The system index varies slowest, then the modes in declaration order.
    ``mode_cutoffs[i]`` is the highest retained occupation of mode i, so the
    mode factor has ``cutoff + 1`` levels.
    """

    system_dim: int
    mode_cutoffs: tuple = ()
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        if self.system_dim < 1:
            raise ValueError("system_dim must be positive")
        object.__setattr__(self, "mode_cutoffs", tuple(int(c) for c in self.mode_cutoffs))
        if any(c < 1 for c in self.mode_cutoffs):
            raise ValueError("mode cutoffs must be positive")
        if self.total_dim > self.dim_cap:
            raise DimensionCapError(
                f"total dimension {self.total_dim} exceeds cap {self.dim_cap}"
            )

    @property
    def mode_dims(self) -> tuple:
        return tuple(c + 1 for c in self.mode_cutoffs)

    @property
    def env_dim(self) -> int:
        d = 1
        for n in self.mode_dims:
            d *= n
        return d

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.env_dim

    @property
    def n_modes(self) -> int:
        return len(self.mode_cutoffs)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform simulation grid t_0 = 0 .. t_max with step dt."""

    t_max: float
    dt: float
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError("t_max and dt must be positive")
        n = round(self.t_max / self.dt)
        if abs(n * self.dt - self.t_max) > 1e-9 * max(self.t_max, 1.0):
            raise ValueError(f"dt={self.dt} does not divide t_max={self.t_max}")
        object.__setattr__(self, "times", self.dt * np.arange(n + 1))

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def half_times(self) -> np.ndarray:
        """All RK4 stage times: grid nodes and interval midpoints."""
        return 0.5 * self.dt * np.arange(2 * self.n_steps + 1)


def tensor_product(a, b, dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    """Kronecker product with the package index convention (left = slow)."""
    a = as_complex_matrix(a, "A")
    b = as_complex_matrix(b, "B")
    if a.shape[0] * b.shape[0] > dim_cap or a.shape[1] * b.shape[1] > dim_cap:
        raise DimensionCapError(
            f"tensor product dimension {a.shape[0] * b.shape[0]} exceeds cap {dim_cap}"
        )
    return np.kron(a, b)


def partial_trace_env(m, layout: SpaceLayout) -> np.ndarray:
    """Trace out every bath-mode factor, returning the system block."""
    arr = as_complex_matrix(m, "M")
    d_tot = layout.total_dim
    if arr.shape != (d_tot, d_tot):
        raise ValueError(
            f"matrix shape {arr.shape} does not match layout total dim {d_tot}"
        )
    d, e = layout.system_dim, layout.env_dim
    return np.einsum("aebe->ab", arr.reshape(d, e, d, e))


def reduced_from_state(psi: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """partial_trace_env(|psi><psi|) without building the full projector."""
    mat = psi.reshape(layout.system_dim, layout.env_dim)
    return mat @ mat.conj().T


def trace_distance(a, b, rtol: float = HERMITICITY_RTOL) -> float:
    """(1/2) sum |eigenvalues| of A - B for Hermitian A, B."""
    a = require_hermitian(a, "A", rtol)
    b = require_hermitian(b, "B", rtol)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = 0.5 * ((a - b) + (a - b).conj().T)
    lam = np.linalg.eigvalsh(diff)
    lam[np.abs(lam) < EIGENVALUE_CLIP] = 0.0
    return 0.5 * float(np.sum(np.abs(lam)))


def fock_occupations(layout: SpaceLayout) -> np.ndarray:
    """Occupation tuple per environment index, shape (env_dim, n_modes)."""
    occ = np.zeros((layout.env_dim, layout.n_modes), dtype=np.int64)
    if layout.n_modes == 0:
        return occ
    idx = np.arange(layout.env_dim)
    for i in range(layout.n_modes - 1, -1, -1):
        nd = layout.mode_dims[i]
        occ[:, i] = idx % nd
        idx //= nd
    return occ


def fock_monomial_weights(layout: SpaceLayout, values) -> np.ndarray:
    """prod_i values_i^{n_i} / sqrt(n_i!) over the environment index.

    This is the (unnormalized) Bargmann overlap <n|value> per Fock tuple n,
    laid out in the package index convention.
    """
    values = np.asarray(values, dtype=np.complex128)
    if len(values) != layout.n_modes:
        raise ValueError("one value per bath mode required")
    w = np.ones(1, dtype=np.complex128)
    for i, nd in enumerate(layout.mode_dims):
        powers = np.arange(nd)
        fact = np.cumprod(np.concatenate(([1.0], np.arange(1.0, nd))))
        w = np.kron(w, values[i] ** powers / np.sqrt(fact))
    return w


def fock_leak_fractions(psi: np.ndarray, layout: SpaceLayout) -> np.ndarray:
    """Population fraction sitting at each mode's top Fock level.

    Returns one number per mode: the probability (relative to the current
    squared norm) of finding that mode at its cutoff occupation.  Used to
    monitor truncation error.
    """
    shape = (layout.system_dim,) + layout.mode_dims
    prob = np.abs(psi.reshape(shape)) ** 2
    total = float(prob.sum())
    if total <= 0.0:
        return np.zeros(layout.n_modes)
    leaks = np.empty(layout.n_modes)
    for i in range(layout.n_modes):
        leaks[i] = prob.take(indices=layout.mode_cutoffs[i], axis=1 + i).sum() / total
    return leaks
