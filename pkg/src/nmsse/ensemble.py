"""Monte Carlo driver: sample noise, run trajectories, average projectors.

The ensemble mean of the unnormalized projectors |psi_Z(t)><psi_Z(t)|
reconstructs the reduced density operator.  Reproducibility is a
contract here, not an aspiration:

* trajectory k (1-based) always draws from RngStream(master_seed, k);
* trajectories are processed in fixed chunks of :data:`CHUNK_SIZE`, and
  chunk partial sums are combined by a fixed-order pairwise tree,

so results are bit-identical for any worker count and across repeated
runs with the same seed.  Workers are threads; the integration kernels
release the GIL.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import BathModel, KernelGrid, SystemModel, tabulate_kernel
from .noise import (
    NoiseRealization,
    RngStream,
    grid_factor,
    sample_grid_factorization,
    sample_mode_sum_T0,
    sample_thermal_mode_sum,
)
from .numerics import TimeGrid, as_state_vector, hermiticity_defect, trace_distance
from .solver import BargmannClosure, MemoryClosure, run_trajectory_batch

# Trajectories per accumulation chunk.  Fixed (never derived from the
# worker count) so that the reduction tree is schedule-independent.
CHUNK_SIZE = 128

NOISE_STRATEGIES = ("mode_sum", "thermal_mode_sum", "grid_factorization")

HERMITIZATION_LIMIT = 1e-9


@dataclass(frozen=True)
class EnsembleConfig:
    """Run parameters for one Monte Carlo ensemble."""

    n_trajectories: int
    master_seed: int
    noise_strategy: str = "mode_sum"
    workers: int = 1

    def __post_init__(self):
        if self.n_trajectories < 2:
            raise ValueError("need at least 2 trajectories to estimate variance")
        if self.noise_strategy not in NOISE_STRATEGIES:
            raise ValueError(f"unknown noise strategy {self.noise_strategy!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class EnsembleResult:
    """Averaged density matrices with Monte Carlo error estimates."""

    times: np.ndarray
    rho_mean: np.ndarray          # (T, d, d) Hermitized mean projector
    rho_stderr: np.ndarray        # (T, d, d) real, re/im in quadrature
    trace: np.ndarray             # (T,) real
    trace_stderr: np.ndarray      # (T,) real
    n_trajectories: int
    master_seed: int
    diagnostics: dict = field(default_factory=dict)
    prefix_means: dict = field(default_factory=dict)  # {n: (T, d, d)}


@dataclass
class _ChunkMoments:
    s1: np.ndarray        # (T, d, d) complex, sum of projectors
    s2_re: np.ndarray     # (T, d, d) real, sum of Re(projector)^2
    s2_im: np.ndarray     # (T, d, d) real
    tr1: np.ndarray       # (T,) real, sum of squared norms
    tr2: np.ndarray       # (T,) real, sum of squared norms squared
    norm_max: np.ndarray  # (T,) real
    final_norms: np.ndarray  # (B,) squared norms at t_max, chunk order
    count: int

    @staticmethod
    def combine(a: "_ChunkMoments", b: "_ChunkMoments") -> "_ChunkMoments":
        return _ChunkMoments(
            s1=a.s1 + b.s1, s2_re=a.s2_re + b.s2_re, s2_im=a.s2_im + b.s2_im,
            tr1=a.tr1 + b.tr1, tr2=a.tr2 + b.tr2,
            norm_max=np.maximum(a.norm_max, b.norm_max),
            final_norms=np.concatenate([a.final_norms, b.final_norms]),
            count=a.count + b.count,
        )


def _pairwise_reduce(items: list["_ChunkMoments"]) -> "_ChunkMoments":
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            nxt.append(_ChunkMoments.combine(items[i], items[i + 1]))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _sample_noise(strategy: str, bath: BathModel | None, kernel, factor,
                  grid: TimeGrid, stream: RngStream) -> NoiseRealization:
    if strategy == "mode_sum":
        return sample_mode_sum_T0(bath, grid, stream)
    if strategy == "thermal_mode_sum":
        return sample_thermal_mode_sum(bath, grid, stream)
    return sample_grid_factorization(kernel, stream, factor=factor)


def _chunk_moments(states: np.ndarray) -> _ChunkMoments:
    """Projector moments of one chunk of trajectory states (B, T, d)."""
    proj = np.einsum("bti,btj->btij", states, states.conj())
    norms = np.einsum("bti,bti->bt", states, states.conj()).real
    return _ChunkMoments(
        s1=proj.sum(axis=0),
        s2_re=(proj.real ** 2).sum(axis=0),
        s2_im=(proj.imag ** 2).sum(axis=0),
        tr1=norms.sum(axis=0),
        tr2=(norms ** 2).sum(axis=0),
        norm_max=norms.max(axis=0),
        final_norms=norms[:, -1].copy(),
        count=states.shape[0],
    )


def run_ensemble(sys: SystemModel, bath: BathModel | None,
                 config: EnsembleConfig, closure: MemoryClosure,
                 grid: TimeGrid, psi0: np.ndarray,
                 kernel: KernelGrid | None = None,
                 prefix_fractions: tuple = (0.25, 0.5)) -> EnsembleResult:
    """Run the full Monte Carlo ensemble defined by ``config``.

    ``kernel`` is required for the grid-factorization strategy (and is
    tabulated from the bath when omitted).  ``prefix_fractions`` request
    snapshot means over leading sub-ensembles (at chunk granularity) for
    convergence studies.
    """
    psi0 = as_state_vector(psi0, "psi0")
    n = config.n_trajectories
    strategy = config.noise_strategy

    if strategy == "grid_factorization":
        if kernel is None:
            if bath is None:
                raise ValueError("grid factorization needs a kernel or a bath")
            kernel = tabulate_kernel(bath, grid)
        factor = grid_factor(kernel)
    else:
        if bath is None:
            raise ValueError(f"{strategy} noise requires a bath model")
        if strategy == "mode_sum" and bath.temperature != 0.0:
            raise ValueError("mode_sum noise requires a zero-temperature bath")
        factor = None

    if isinstance(closure, BargmannClosure):
        if strategy != "mode_sum":
            raise ValueError("the Bargmann closure requires mode-sum noise")
        closure.prepare(grid, psi0)  # one-time, before the worker pool

    chunks = [(lo, min(lo + CHUNK_SIZE, n)) for lo in range(0, n, CHUNK_SIZE)]

    def process(chunk) -> _ChunkMoments:
        lo, hi = chunk
        noises = [
            _sample_noise(strategy, bath, kernel, factor, grid,
                          RngStream(config.master_seed, k))
            for k in range(lo + 1, hi + 1)
        ]
        states = run_trajectory_batch(sys, closure, noises, grid, psi0)
        return _chunk_moments(states)

    if config.workers == 1:
        partials = [process(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            partials = list(pool.map(process, chunks))

    total = _pairwise_reduce(list(partials))
    result = _finalize(total, grid, config)

    for frac in prefix_fractions:
        n_chunks = max(1, round(frac * len(partials)))
        if n_chunks >= len(partials):
            continue
        part = _pairwise_reduce(list(partials[:n_chunks]))
        result.prefix_means[part.count] = _hermitize(part.s1 / part.count)
    result.prefix_means[total.count] = result.rho_mean
    return result


def _hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def _finalize(total: _ChunkMoments, grid: TimeGrid,
              config: EnsembleConfig) -> EnsembleResult:
    n = total.count
    mean = total.s1 / n
    asym = max(hermiticity_defect(mean[j]) for j in range(mean.shape[0]))
    if asym > HERMITIZATION_LIMIT:
        raise RuntimeError(
            f"ensemble mean asymmetry {asym:.3e} exceeds {HERMITIZATION_LIMIT:.0e}"
        )
    rho_mean = _hermitize(mean)

    def stderr(sum_sq, mean_part):
        var = np.maximum(sum_sq / n - mean_part ** 2, 0.0) * n / max(n - 1, 1)
        return np.sqrt(var / n)

    rho_stderr = np.sqrt(
        stderr(total.s2_re, mean.real) ** 2 + stderr(total.s2_im, mean.imag) ** 2
    )
    tr_mean = total.tr1 / n
    tr_stderr = stderr(total.tr2, tr_mean)

    finals = total.final_norms
    diagnostics = {
        "hermitization_asymmetry": float(asym),
        "norm_max_over_time": total.norm_max,
        "final_norm_max": float(finals.max()),
        "final_norm_median": float(np.median(finals)),
    }
    return EnsembleResult(
        times=grid.times.copy(), rho_mean=rho_mean, rho_stderr=rho_stderr,
        trace=tr_mean, trace_stderr=tr_stderr,
        n_trajectories=n, master_seed=config.master_seed,
        diagnostics=diagnostics,
    )


def average_density(trajectories, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted Hermitized mean of outer products plus element stderr.

    ``trajectories`` is a sequence of state vectors (or an (N, d) array).
    With a single state the stderr is zero by convention.
    """
    arr = np.asarray(list(trajectories), dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a nonempty list of equal-dimension states")
    n = arr.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError("one weight per trajectory required")
        w = w / w.sum()
    proj = np.einsum("bi,bj->bij", arr, arr.conj())
    mean = np.einsum("b,bij->ij", w, proj)
    mean_h = 0.5 * (mean + mean.conj().T)
    if n == 1:
        return mean_h, np.zeros(mean.shape)
    # Variance of the weighted mean: sum w^2 (x - mean)^2 / (1 - sum w^2);
    # reduces to the usual s^2/N of the mean for uniform weights.
    dev = proj - mean[None, :, :]
    w2 = float((w ** 2).sum())
    var_re = np.einsum("b,bij->ij", w ** 2, dev.real ** 2) / max(1.0 - w2, 1e-300)
    var_im = np.einsum("b,bij->ij", w ** 2, dev.imag ** 2) / max(1.0 - w2, 1e-300)
    return mean_h, np.sqrt(var_re + var_im)


@dataclass(frozen=True)
class ConvergenceReport:
    """Distance-to-target metrics for one ensemble run."""

    times: np.ndarray
    trace_distances: np.ndarray      # (T,)
    max_trace_distance: float
    mean_trace_distance: float
    max_zscore: float                # max over elements/times of |mean - target| / stderr
    prefix_ns: np.ndarray            # trajectory counts of the prefix means
    prefix_distances: np.ndarray     # time-averaged trace distance per prefix
    fitted_slope: float | None       # d log(distance) / d log(N)


def convergence_report(result: EnsembleResult, target: np.ndarray) -> ConvergenceReport:
    """Compare an ensemble mean against a reference density series."""
    target = np.asarray(target, dtype=np.complex128)
    if target.shape != result.rho_mean.shape:
        raise ValueError(
            f"target shape {target.shape} does not match ensemble "
            f"{result.rho_mean.shape}"
        )
    t_len = target.shape[0]
    dists = np.array([
        trace_distance(result.rho_mean[j], target[j]) for j in range(t_len)
    ])
    safe = np.where(result.rho_stderr > 0, result.rho_stderr, np.inf)
    zscores = np.abs(result.rho_mean - target) / safe
    max_z = float(zscores.max()) if zscores.size else 0.0

    ns, pdists = [], []
    for n_prefix in sorted(result.prefix_means):
        rho_p = result.prefix_means[n_prefix]
        ds = [trace_distance(rho_p[j], target[j]) for j in range(t_len)]
        ns.append(n_prefix)
        pdists.append(float(np.mean(ds)))
    slope = None
    if len(ns) >= 2 and all(d > 0 for d in pdists):
        slope = float(np.polyfit(np.log(ns), np.log(pdists), 1)[0])
    return ConvergenceReport(
        times=result.times.copy(),
        trace_distances=dists,
        max_trace_distance=float(dists.max()),
        mean_trace_distance=float(dists.mean()),
        max_zscore=max_z,
        prefix_ns=np.array(ns, dtype=int),
        prefix_distances=np.array(pdists),
        fitted_slope=slope,
    )
