"""Exact reference dynamics used to validate the stochastic trajectories.

Everything here works on the truncated system (x) Fock space:

* full unitary propagation of the total pure state,
* the reduced density operator by partial trace,
* Bargmann projection onto coherent-state labels (the per-realization
  bridge to the trajectory picture),
* thermal initial-state sampling via coherent states,
* a Lindblad integrator serving as the white-noise reference,
* an exact thermal reduced-dynamics evaluator that averages sampled
  coherent projectors into an initial bath mixture and evolves it through
  one eigendecomposition of the total Hamiltonian (mathematically the
  same average as propagating each sample, evaluated in closed form).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import BathModel, SystemModel, build_total_hamiltonian
from .noise import RngStream, SQRT2
from .numerics import (
    SpaceLayout,
    TimeGrid,
    as_state_vector,
    fock_monomial_weights,
    fock_occupations,
    require_hermitian,
)
from .solver import check_fock_leak, commutator_defect, memory_integral_cumulative

# |b|^2 above this fraction of a mode's cutoff biases the truncated
# coherent state; such draws are rejected and redrawn.
COHERENT_RESAMPLE_FRACTION = 0.5

NORM_DRIFT_LIMIT = 1e-6


@dataclass(frozen=True)
class TotalState:
    """Total pure state over the truncated system (x) environment space."""

    layout: SpaceLayout
    psi: np.ndarray
    t: float

    @property
    def norm_sq(self) -> float:
        return float(np.real(np.vdot(self.psi, self.psi)))


@dataclass(frozen=True)
class CoherentSample:
    """Sampled coherent labels for every bath mode."""

    amplitudes: np.ndarray
    resamples: int = 0

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if not np.all(np.isfinite(a.view(np.float64))):
            raise ValueError("coherent amplitudes must be finite")
        object.__setattr__(self, "amplitudes", a)


def coherent_state_vector(b: complex, n_levels: int) -> np.ndarray:
    """Truncated coherent state, renormalized after truncation."""
    n = np.arange(n_levels)
    log_fact = np.cumsum(np.concatenate(([0.0], np.log(np.arange(1, n_levels)))))
    amp = np.exp(n * np.log(complex(b)) - 0.5 * log_fact) if b != 0 else None
    if amp is None:
        vec = np.zeros(n_levels, dtype=np.complex128)
        vec[0] = 1.0
        return vec
    vec = amp.astype(np.complex128)
    vec /= np.linalg.norm(vec)
    return vec


def vacuum_state(layout: SpaceLayout) -> np.ndarray:
    vec = np.zeros(layout.env_dim, dtype=np.complex128)
    vec[0] = 1.0
    return vec


def propagate_total(sys: SystemModel, bath: BathModel, layout: SpaceLayout,
                    psi0_sys: np.ndarray, grid: TimeGrid,
                    bath_state: np.ndarray | None = None) -> list[TotalState]:
    """RK4 propagation of psi0 (x) bath_state under the total Hamiltonian.

    ``bath_state`` defaults to the vacuum (the T = 0 initial condition);
    thermal runs pass a coherent state from :func:`sample_thermal_initial`.
    """
    psi0_sys = as_state_vector(psi0_sys, "psi0")
    if bath_state is None:
        bath_state = vacuum_state(layout)
    bath_state = as_state_vector(bath_state, "bath_state")
    if len(bath_state) != layout.env_dim:
        raise ValueError("bath state dimension does not match the layout")
    h = build_total_hamiltonian(sys, bath, layout)
    psi = np.kron(psi0_sys, bath_state)
    norm0 = np.linalg.norm(psi)
    dt = grid.dt
    states = [TotalState(layout=layout, psi=psi.copy(), t=0.0)]
    for t in grid.times[:-1]:
        k1 = -1j * (h @ psi)
        k2 = -1j * (h @ (psi + 0.5 * dt * k1))
        k3 = -1j * (h @ (psi + 0.5 * dt * k2))
        k4 = -1j * (h @ (psi + dt * k3))
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states.append(TotalState(layout=layout, psi=psi.copy(), t=float(t + dt)))
    drift = abs(np.linalg.norm(psi) - norm0)
    if drift > NORM_DRIFT_LIMIT:
        raise RuntimeError(
            f"unitary propagation lost norm by {drift:.2e}; dt is too large"
        )
    check_fock_leak([s.psi for s in states], layout, "total-state propagation")
    return states


def reduced_density(states: list[TotalState]) -> np.ndarray:
    """rho_sys(t_j) = Tr_env |Psi(t_j)><Psi(t_j)|, shape (T, d, d)."""
    if not states:
        raise ValueError("empty state list")
    layout = states[0].layout
    d, e = layout.system_dim, layout.env_dim
    out = np.empty((len(states), d, d), dtype=np.complex128)
    for j, s in enumerate(states):
        mat = s.psi.reshape(d, e)
        out[j] = mat @ mat.conj().T
    return out


def bargmann_project(state: TotalState, sample: CoherentSample | np.ndarray,
                     rotate: bool = False,
                     bath: BathModel | None = None) -> np.ndarray:
    """Project the total state onto coherent labels a -> system vector.

    Returns sum_n Psi(sys, n) prod_i abar_i^{n_i} / sqrt(n_i!), with
    abar_i = a_i^* for ``rotate=False`` and abar_i = (a_i e^{-i w_i t})^*
    for ``rotate=True``.  The rotated form lives in the environment
    interaction picture (the convention of the per-realization identity,
    with zero-point energies dropped).
    """
    a = sample.amplitudes if isinstance(sample, CoherentSample) else \
        np.asarray(sample, dtype=np.complex128)
    layout = state.layout
    if len(a) != layout.n_modes:
        raise ValueError("one coherent amplitude per mode required")
    abar = np.conj(a)
    if rotate:
        if bath is None:
            raise ValueError("rotate=True requires the bath (mode frequencies)")
        abar = abar * np.exp(1j * bath.frequencies() * state.t)
    w = fock_monomial_weights(layout, abar)
    return state.psi.reshape(layout.system_dim, layout.env_dim) @ w


def bargmann_project_series(states: list[TotalState], sample, bath: BathModel,
                            rotate: bool = True) -> np.ndarray:
    """Project a whole propagation onto one coherent label -> (T, d).

    Equivalent to calling :func:`bargmann_project` per state, but the
    time-dependent rotation phases are applied vectorized.
    """
    a = sample.amplitudes if isinstance(sample, CoherentSample) else \
        np.asarray(sample, dtype=np.complex128)
    layout = states[0].layout
    d, e = layout.system_dim, layout.env_dim
    w0 = fock_monomial_weights(layout, np.conj(a))
    times = np.array([s.t for s in states])
    if rotate:
        occ = fock_occupations(layout)
        env_freq = occ @ bath.frequencies() if layout.n_modes else np.zeros(e)
        weights = w0[None, :] * np.exp(1j * np.multiply.outer(times, env_freq))
    else:
        weights = np.broadcast_to(w0, (len(states), e))
    psi = np.stack([s.psi for s in states]).reshape(len(states), d, e)
    return np.einsum("tde,te->td", psi, weights)


def dephasing_reference(sys: SystemModel, bath: BathModel, psi0: np.ndarray,
                        grid: TimeGrid) -> np.ndarray:
    """Exact reduced dynamics for commuting coupling ([L, H] = 0).

    In the common eigenbasis (energies E_j, coupling eigenvalues l_j):

        rho_jk(t) = rho_jk(0) e^{-i(E_j - E_k) t}
                    e^{-i (l_j^2 - l_k^2) Im IA(t)}
                    e^{-(l_j - l_k)^2 Re IA(t)},

    with IA(t) = int_0^t A(s) ds the cumulative memory integral.  Agrees
    with the displaced-oscillator solution of the independent boson model
    (including the coupling-induced phase) at any temperature.
    """
    if commutator_defect(sys) > 1e-10:
        raise ValueError("dephasing reference requires [L, H] = 0")
    psi0 = as_state_vector(psi0, "psi0")
    evals, vecs = _common_eigenbasis(sys.hamiltonian, sys.coupling)
    lvals = np.real(np.diag(vecs.conj().T @ sys.coupling @ vecs))
    psi_e = vecs.conj().T @ psi0
    rho0 = np.outer(psi_e, psi_e.conj())
    ia = memory_integral_cumulative(bath, grid.times)
    ia = np.atleast_1d(ia)
    de = np.subtract.outer(evals, evals)
    dl2 = np.subtract.outer(lvals ** 2, lvals ** 2)
    dl_sq = np.subtract.outer(lvals, lvals) ** 2
    out = np.empty((len(grid.times),) + rho0.shape, dtype=np.complex128)
    for j, t in enumerate(grid.times):
        factor = np.exp(-1j * de * t - 1j * dl2 * ia[j].imag - dl_sq * ia[j].real)
        out[j] = vecs @ (rho0 * factor) @ vecs.conj().T
    return out


def _common_eigenbasis(h: np.ndarray, l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simultaneous eigenbasis of commuting Hermitian H and L."""
    evals, vecs = np.linalg.eigh(h)
    scale = max(float(np.max(np.abs(evals))), 1.0)
    start = 0
    n = len(evals)
    while start < n:
        stop = start + 1
        while stop < n and evals[stop] - evals[start] <= 1e-10 * scale:
            stop += 1
        if stop - start > 1:
            block = vecs[:, start:stop]
            _, rot = np.linalg.eigh(block.conj().T @ l @ block)
            vecs[:, start:stop] = block @ rot
        start = stop
    return evals, vecs


def sample_thermal_initial(bath: BathModel, layout: SpaceLayout,
                           rng: RngStream) -> tuple[CoherentSample, np.ndarray]:
    """Draw one thermal coherent configuration and its truncated bath vector.

    Per mode, b is circular complex Gaussian with E[|b|^2] = nbar; draws
    with |b|^2 beyond half the cutoff are rejected and redrawn (counted),
    guarding truncation bias.  Averaging |b><b| over draws reproduces the
    thermal state.  Draw order: two normals per mode, mode by mode,
    redraws inline.
    """
    if layout.n_modes != bath.n_modes:
        raise ValueError("layout mode count does not match the bath")
    gen = rng.generator()
    nbar = bath.occupations()
    amps = np.empty(bath.n_modes, dtype=np.complex128)
    resamples = 0
    factors = []
    for i in range(bath.n_modes):
        scale = np.sqrt(nbar[i])
        limit = COHERENT_RESAMPLE_FRACTION * layout.mode_cutoffs[i]
        while True:
            x = gen.standard_normal(2)
            b = scale * (x[0] + 1j * x[1]) / SQRT2
            if abs(b) ** 2 <= limit:
                break
            resamples += 1
        amps[i] = b
        factors.append(coherent_state_vector(b, layout.mode_dims[i]))
    if resamples:
        warnings.warn(
            f"thermal initial sampling redrew {resamples} amplitude(s) beyond "
            f"the truncation guard; consider larger cutoffs",
            RuntimeWarning, stacklevel=2,
        )
    vec = vacuum_state(layout)
    if factors:
        vec = factors[0]
        for f in factors[1:]:
            vec = np.kron(vec, f)
    return CoherentSample(amplitudes=amps, resamples=resamples), vec


def lindblad_solve(sys: SystemModel, gamma: float, rho0: np.ndarray,
                   grid: TimeGrid) -> np.ndarray:
    """RK4 integration of drho/dt = -i[H, rho] + gamma (L rho L - {L^2, rho}/2)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rho0 = require_hermitian(rho0, "rho0")
    h, l = sys.hamiltonian, sys.coupling
    l2 = l @ l

    def rhs(rho):
        return (-1j * (h @ rho - rho @ h)
                + gamma * (l @ rho @ l - 0.5 * (l2 @ rho + rho @ l2)))

    dt = grid.dt
    out = np.empty((len(grid.times),) + rho0.shape, dtype=np.complex128)
    out[0] = rho0
    rho = rho0.copy()
    for j in range(grid.n_steps):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = rho
    return out


def thermal_reduced_dynamics(sys: SystemModel, bath: BathModel,
                             layout: SpaceLayout, psi0_sys: np.ndarray,
                             grid: TimeGrid, n_samples: int,
                             rng: RngStream) -> np.ndarray:
    """Reduced dynamics from thermally sampled coherent initial bath states.

    Draws ``n_samples`` coherent configurations with streams
    (rng.seed, rng.index + k), averages their projectors into an empirical
    initial bath mixture, and evolves the reduced density exactly through
    one eigendecomposition of the total Hamiltonian.  By linearity this
    equals the average of the per-sample reduced propagations, without the
    per-sample cost.  Returns rho_sys at every grid time, shape (T, d, d).
    """
    psi0_sys = as_state_vector(psi0_sys, "psi0")
    d, e = layout.system_dim, layout.env_dim

    rho_env = np.zeros((e, e), dtype=np.complex128)
    total_resamples = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(n_samples):
            samp, vec = sample_thermal_initial(bath, layout, rng.child(rng.index + k))
            total_resamples += samp.resamples
            rho_env += np.outer(vec, vec.conj())
    rho_env /= n_samples
    if total_resamples:
        warnings.warn(
            f"thermal oracle redrew {total_resamples} coherent amplitude(s)",
            RuntimeWarning, stacklevel=2,
        )

    # Factor the empirical mixture: rho_env = F F^dagger.
    lam, vecs = np.linalg.eigh(rho_env)
    keep = lam > 1e-14 * max(float(lam[-1]), 1e-300)
    factor_env = vecs[:, keep] * np.sqrt(lam[keep])[None, :]

    h = build_total_hamiltonian(sys, bath, layout)
    evals, p = np.linalg.eigh(h)

    # rho_0 = |psi0><psi0| (x) rho_env = B B^dagger with B = psi0 (x) F.
    b = np.kron(psi0_sys.reshape(d, 1), factor_env)
    b_eig = p.conj().T @ b
    rho0_eig_t = (b_eig @ b_eig.conj().T).T.copy()

    # rho_ab(t) = sum_{ij} G^{ab}_{ij} e^{i(E_i - E_j)t} with
    # G^{ab} = (P_b^dag P_a) o rho0_eig^T, P_s the system-block rows of P.
    blocks = p.reshape(d, e, -1)
    pairs = [(a_i, b_i) for a_i in range(d) for b_i in range(d) if a_i <= b_i]
    g_stack = np.empty((len(pairs), len(evals), len(evals)), dtype=np.complex128)
    for idx, (a_i, b_i) in enumerate(pairs):
        xt = blocks[b_i].conj().T @ blocks[a_i]
        g_stack[idx] = xt * rho0_eig_t

    times = grid.times
    rho = np.empty((len(times), d, d), dtype=np.complex128)
    flat = g_stack.reshape(len(pairs) * len(evals), len(evals))
    for j, t in enumerate(times):
        phases = np.exp(1j * evals * t)
        partial = (flat @ phases.conj()).reshape(len(pairs), len(evals))
        vals = partial @ phases
        m = np.empty((d, d), dtype=np.complex128)
        for idx, (a_i, b_i) in enumerate(pairs):
            m[a_i, b_i] = vals[idx]
            m[b_i, a_i] = np.conj(vals[idx])
        rho[j] = m
    return rho
