"""Synthesis and validation of the colored complex Gaussian driving process.

Target statistics for the process Z(t):

    M[Z(t)] = 0,    M[Z(t) Z(s)] = 0,    M[Z(t) Z*(s)] = conj(alpha(t, s)).

All samplers use standard circular complex Gaussians with E[|a|^2] = 1
(variance 1/2 per real quadrature), matching the Gaussian measure
d^2a exp(-|a|^2) with d^2a = dRe dIm / pi.

Three strategies are provided:

* ``sample_mode_sum_T0``     - Z(t) = sum_i kappa_i a_i^* e^{+i omega_i t},
  valid for T = 0 discrete-mode baths; the sampled amplitudes ``a`` are the
  coherent-state labels of the microscopic picture and are kept in the
  realization's provenance.
* ``sample_thermal_mode_sum`` - two-field extension
  Z(t) = sum_i [sqrt(g_i (nbar_i+1)) a_i^* e^{+i omega_i t}
                + sqrt(g_i nbar_i) b_i^* e^{-i omega_i t}],
  which reproduces the finite-T kernel exactly and reduces to the T = 0
  mode sum when every nbar vanishes.  Its per-realization microscopic
  meaning is not claimed, only its statistics.
* ``sample_grid_factorization`` - Z = L xi from a Hermitian factorization
  C = L L^dagger of the tabulated covariance; works for any PSD kernel.

Draw-order contract (bit-reproducibility): each sampler consumes its
RngStream in a fixed documented order; see the individual functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BathModel, KernelGrid
from .numerics import TimeGrid

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream: (seed, index) -> Generator.

    Identical (seed, index) pairs reproduce identical draws bit-exactly.
    """

    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence((int(self.seed) & (2**64 - 1),
                                    int(self.index) & (2**64 - 1)))
        )

    def child(self, index: int) -> "RngStream":
        return RngStream(seed=self.seed, index=index)


def _draw_circular(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard circular complex Gaussians from one interleaved block."""
    x = rng.standard_normal(2 * n)
    return (x[0::2] + 1j * x[1::2]) / SQRT2


@dataclass(frozen=True)
class NoiseRealization:
    """One sampled complex process on the simulation grid.

    ``coef_pos``/``omegas_pos`` and ``coef_neg``/``omegas_neg`` hold the
    analytic form Z(t) = sum c_pos e^{+i w t} + sum c_neg e^{-i w t} when
    the realization came from a mode sum; grid-factorized realizations
    only carry grid values.  ``coherent_sample`` stores the raw coherent
    amplitudes ``a`` for T = 0 mode sums (needed by the exact closure).
    """

    times: np.ndarray
    values: np.ndarray
    strategy: str
    coef_pos: np.ndarray | None = field(default=None, repr=False)
    omegas_pos: np.ndarray | None = field(default=None, repr=False)
    coef_neg: np.ndarray | None = field(default=None, repr=False)
    omegas_neg: np.ndarray | None = field(default=None, repr=False)
    coherent_sample: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != t.shape:
            raise ValueError("values and times must have matching length")
        if not np.all(np.isfinite(v.view(np.float64))):
            raise ValueError("noise realization contains NaN/Inf")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def is_analytic(self) -> bool:
        return self.coef_pos is not None

    def eval_at(self, t) -> np.ndarray:
        """Evaluate Z at arbitrary times (analytic realizations only)."""
        if not self.is_analytic:
            raise ValueError("grid-only realization cannot be evaluated off-grid")
        t = np.asarray(t, dtype=float)
        out = np.exp(1j * np.multiply.outer(t, self.omegas_pos)) @ self.coef_pos
        if self.coef_neg is not None and len(self.coef_neg):
            out = out + np.exp(-1j * np.multiply.outer(t, self.omegas_neg)) @ self.coef_neg
        return out

    def stage_values(self, grid: TimeGrid) -> np.ndarray:
        """Z at all RK4 stage times (grid nodes and interval midpoints).

        Analytic realizations are evaluated exactly.  Grid-only
        realizations use nearest-node sampling (ties resolved to the left
        node), i.e. a piecewise-constant interpolant whose plateaus are
        centered on the stored samples.
        """
        if len(self.times) != len(grid.times) or not np.allclose(
                self.times, grid.times, rtol=0, atol=1e-12):
            raise ValueError("noise grid does not match the simulation grid")
        if self.is_analytic:
            return self.eval_at(grid.half_times())
        out = np.empty(2 * grid.n_steps + 1, dtype=np.complex128)
        out[0::2] = self.values
        out[1::2] = self.values[:-1]
        return out


def mode_sum_values(kappas, omegas, amplitudes, times) -> np.ndarray:
    """Z(t_j) = sum_i kappa_i a_i^* e^{+i omega_i t_j} (evaluation helper)."""
    kappas = np.asarray(kappas, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    a = np.asarray(amplitudes, dtype=np.complex128)
    t = np.asarray(times, dtype=float)
    if len(kappas) == 0:
        return np.zeros_like(t, dtype=np.complex128)
    return np.exp(1j * np.multiply.outer(t, omegas)) @ (kappas * np.conj(a))


def sample_mode_sum_T0(bath: BathModel, grid: TimeGrid,
                       rng: RngStream) -> NoiseRealization:
    """Mode-sum realization for a zero-temperature discrete bath.

    Draw order: one interleaved block of 2 * n_modes standard normals
    (re_0, im_0, re_1, im_1, ...) forming the coherent amplitudes a.
    """
    if bath.temperature != 0.0:
        raise ValueError("mode-sum strategy requires a zero-temperature bath")
    gen = rng.generator()
    a = _draw_circular(gen, bath.n_modes)
    kappas = np.sqrt(bath.couplings()) if bath.n_modes else np.zeros(0)
    omegas = bath.frequencies()
    coef = kappas * np.conj(a)
    values = mode_sum_values(kappas, omegas, a, grid.times)
    return NoiseRealization(
        times=grid.times, values=values, strategy="mode_sum",
        coef_pos=coef, omegas_pos=omegas,
        coherent_sample=a,
    )


def thermal_mode_sum_values(couplings, omegas, occupations, a, b, times):
    """Z(t) = sum_i [sqrt(g(nbar+1)) a* e^{+iwt} + sqrt(g nbar) b* e^{-iwt}].

    Returns (values, coef_pos, coef_neg); evaluation helper shared with the
    sampler and directly testable with forced amplitudes.
    """
    g = np.asarray(couplings, dtype=float)
    w = np.asarray(omegas, dtype=float)
    nbar = np.asarray(occupations, dtype=float)
    t = np.asarray(times, dtype=float)
    coef_pos = np.sqrt(g * (nbar + 1.0)) * np.conj(np.asarray(a, dtype=np.complex128))
    coef_neg = np.sqrt(g * nbar) * np.conj(np.asarray(b, dtype=np.complex128))
    if len(g) == 0:
        return np.zeros_like(t, dtype=np.complex128), coef_pos, coef_neg
    values = (np.exp(1j * np.multiply.outer(t, w)) @ coef_pos
              + np.exp(-1j * np.multiply.outer(t, w)) @ coef_neg)
    return values, coef_pos, coef_neg


def sample_thermal_mode_sum(bath: BathModel, grid: TimeGrid,
                            rng: RngStream) -> NoiseRealization:
    """Two-field thermal mode-sum realization (any T >= 0).

    Draw order: the a-block (2 * n_modes interleaved normals) first, then
    the b-block, so that at T = 0 the values coincide bit-for-bit with
    ``sample_mode_sum_T0`` for the same stream.
    """
    gen = rng.generator()
    n = bath.n_modes
    a = _draw_circular(gen, n)
    b = _draw_circular(gen, n)
    w = bath.frequencies()
    values, coef_pos, coef_neg = thermal_mode_sum_values(
        bath.couplings(), w, bath.occupations(), a, b, grid.times
    )
    return NoiseRealization(
        times=grid.times, values=values, strategy="thermal_mode_sum",
        coef_pos=coef_pos, omegas_pos=w,
        coef_neg=coef_neg, omegas_neg=w,
        coherent_sample=a if bath.temperature == 0.0 else None,
    )


def grid_factor(kernel: KernelGrid) -> np.ndarray:
    """Hermitian factor L with L L^dagger = conj(alpha) (clipped eigh)."""
    lam = kernel.check_psd()
    _, vecs = np.linalg.eigh(kernel.covariance())
    return vecs * np.sqrt(lam)[None, :]


def sample_grid_factorization(kernel: KernelGrid, rng: RngStream,
                              factor: np.ndarray | None = None) -> NoiseRealization:
    """Z = L xi with xi i.i.d. standard circular complex Gaussians.

    Draw order: one interleaved block of 2 * n_grid standard normals.
    ``factor`` may be passed to reuse a precomputed factorization.
    """
    if factor is None:
        factor = grid_factor(kernel)
    gen = rng.generator()
    xi = _draw_circular(gen, len(kernel.times))
    return NoiseRealization(
        times=kernel.times, values=factor @ xi, strategy="grid_factorization",
    )


@dataclass(frozen=True)
class NoiseStatsReport:
    """Empirical first/second moments against their targets on a probe grid."""

    probe_times: np.ndarray
    n_samples: int
    mean: np.ndarray            # (P,) empirical M[Z]
    mean_stderr: np.ndarray     # (P,) real
    pseudo: np.ndarray          # (P, P) empirical M[Z Z]
    pseudo_stderr: np.ndarray   # (P, P) real
    cov: np.ndarray             # (P, P) empirical M[Z Z*]
    cov_stderr: np.ndarray      # (P, P) real
    cov_target: np.ndarray      # (P, P) conj(alpha)
    z_mean: float               # max |mean| / stderr
    z_pseudo: float             # max |pseudo| / stderr
    z_cov: float                # max |cov - target| / stderr

    @property
    def max_z(self) -> float:
        return max(self.z_mean, self.z_pseudo, self.z_cov)


def _quad_stderr(sum_sq_re, sum_sq_im, mean, n) -> np.ndarray:
    """Real/imag standard errors of the mean combined in quadrature."""
    var_re = np.maximum(sum_sq_re / n - np.real(mean) ** 2, 0.0) * n / max(n - 1, 1)
    var_im = np.maximum(sum_sq_im / n - np.imag(mean) ** 2, 0.0) * n / max(n - 1, 1)
    return np.sqrt((var_re + var_im) / n)


def probe_indices(n: int, max_points: int = 20) -> np.ndarray:
    """At most ``max_points`` roughly equally spaced grid indices."""
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, max_points)).astype(int))


def validate_statistics(samples, kernel: KernelGrid,
                        max_probe: int = 20) -> NoiseStatsReport:
    """Compare empirical moments of sampled realizations to the kernel.

    Requires at least 100 samples on a common grid.  The grid is coarsened
    to at most ``max_probe`` probe points; deviations are normalized by the
    standard error of the estimator ("z-score units").
    """
    samples = list(samples)
    if len(samples) < 100:
        raise ValueError("need at least 100 samples for statistics validation")
    t0 = samples[0].times
    for s in samples:
        if len(s.times) != len(t0) or not np.allclose(s.times, t0, rtol=0, atol=1e-12):
            raise ValueError("samples are not on a common grid")
    if len(kernel.times) != len(t0) or not np.allclose(kernel.times, t0,
                                                       rtol=0, atol=1e-12):
        raise ValueError("kernel grid does not match the sample grid")

    idx = probe_indices(len(t0), max_probe)
    z = np.stack([s.values[idx] for s in samples])  # (N, P)
    n = z.shape[0]

    mean = z.mean(axis=0)
    mean_stderr = _quad_stderr((z.real ** 2).sum(0), (z.imag ** 2).sum(0), mean, n)

    # Pairwise products via Gram matrices: W[j,k] = Z_j Z_k and Z_j Z_k^*.
    pseudo = (z.T @ z) / n
    cov = (z.T @ z.conj()) / n
    zz = z * z
    abs2 = np.abs(z) ** 2
    # E[Re(W)^2] = (E[W^2] + 2 E[|W|^2] + E[conj(W)^2]) / 4, and similarly
    # for Im with a sign flip; |W|^2 factorizes as |Z_j|^2 |Z_k|^2.
    pse_w2 = (zz.T @ zz) / n
    pse_abs2 = (abs2.T @ abs2) / n
    pseudo_stderr = _stderr_from_products(pse_w2, pse_abs2, pseudo, n)
    cov_w2 = (zz.T @ zz.conj()) / n
    cov_stderr = _stderr_from_products(cov_w2, pse_abs2, cov, n)

    cov_target = kernel.covariance()[np.ix_(idx, idx)]

    z_mean = _max_z(np.abs(mean), mean_stderr)
    z_pseudo = _max_z(np.abs(pseudo), pseudo_stderr)
    z_cov = _max_z(np.abs(cov - cov_target), cov_stderr)

    return NoiseStatsReport(
        probe_times=t0[idx], n_samples=n,
        mean=mean, mean_stderr=mean_stderr,
        pseudo=pseudo, pseudo_stderr=pseudo_stderr,
        cov=cov, cov_stderr=cov_stderr, cov_target=cov_target,
        z_mean=z_mean, z_pseudo=z_pseudo, z_cov=z_cov,
    )


def _stderr_from_products(mean_w2, mean_abs2, mean_w, n) -> np.ndarray:
    e_re2 = 0.25 * np.real(mean_w2 + np.conj(mean_w2)) + 0.5 * mean_abs2
    e_im2 = -0.25 * np.real(mean_w2 + np.conj(mean_w2)) + 0.5 * mean_abs2
    var_re = np.maximum(e_re2 - np.real(mean_w) ** 2, 0.0) * n / max(n - 1, 1)
    var_im = np.maximum(e_im2 - np.imag(mean_w) ** 2, 0.0) * n / max(n - 1, 1)
    return np.sqrt((var_re + var_im) / n)


def _max_z(abs_dev: np.ndarray, stderr: np.ndarray) -> float:
    # Guard degenerate estimators (identically zero samples): zero deviation
    # with zero stderr counts as z = 0.
    safe = np.where(stderr > 0, stderr, 1.0)
    zs = np.where((abs_dev == 0) & (stderr == 0), 0.0, abs_dev / safe)
    return float(np.max(zs)) if zs.size else 0.0


def realization_to_csv_rows(noise: NoiseRealization):
    """Rows (t, Re Z, Im Z) for the optional CSV dump."""
    for t, v in zip(noise.times, noise.values):
        yield t, v.real, v.imag
