import numpy as np
import pytest

from nmsse.model import BathMode, BathModel, KernelGrid, tabulate_kernel
from nmsse.noise import (
    NoiseRealization,
    RngStream,
    grid_factor,
    mode_sum_values,
    sample_grid_factorization,
    sample_mode_sum_T0,
    sample_thermal_mode_sum,
    thermal_mode_sum_values,
    validate_statistics,
)
from nmsse.numerics import TimeGrid

GRID = TimeGrid(t_max=5.0, dt=0.5)


def single_mode_bath(g=0.25, omega=1.0, temperature=0.0):
    return BathModel(modes=(BathMode(g=g, omega=omega),), temperature=temperature)


def test_mode_sum_empty_bath_is_zero():
    bath = BathModel(modes=(), temperature=0.0)
    nz = sample_mode_sum_T0(bath, GRID, RngStream(1, 1))
    assert np.all(nz.values == 0)


def test_mode_sum_forced_amplitude():
    # kappa = 0.5, a = 1 -> Z(t) = 0.5 e^{+it}
    t = np.linspace(0, 3, 7)
    z = mode_sum_values([0.5], [1.0], [1.0 + 0.0j], t)
    assert np.allclose(z, 0.5 * np.exp(1j * t))


def test_mode_sum_zero_frequency_constant():
    t = np.linspace(0, 3, 7)
    z = mode_sum_values([0.5], [0.0], [0.3 - 0.4j], t)
    assert np.allclose(z, z[0])


def test_mode_sum_rejects_thermal_bath():
    with pytest.raises(ValueError):
        sample_mode_sum_T0(single_mode_bath(temperature=1.0), GRID, RngStream(1, 1))


def test_thermal_reduces_to_t0():
    bath = single_mode_bath(temperature=0.0)
    stream = RngStream(17, 5)
    a = sample_mode_sum_T0(bath, GRID, stream)
    b = sample_thermal_mode_sum(bath, GRID, stream)
    assert np.array_equal(a.values, b.values)
    assert b.coherent_sample is not None


def test_thermal_forced_amplitudes():
    # g = 1, nbar = 1, a = b = 1 -> Z(t) = sqrt(2) e^{+it} + e^{-it}
    t = np.linspace(0, 2, 5)
    z, _, _ = thermal_mode_sum_values([1.0], [1.0], [1.0], [1.0], [1.0], t)
    assert np.allclose(z, np.sqrt(2) * np.exp(1j * t) + np.exp(-1j * t))


def test_thermal_covariance_matches_kernel():
    bath = BathModel(modes=(BathMode(g=0.2, omega=0.8),
                            BathMode(g=0.1, omega=1.7)), temperature=0.9)
    probe = TimeGrid(t_max=4.0, dt=0.5)
    kernel = tabulate_kernel(bath, probe)
    samples = [sample_thermal_mode_sum(bath, probe, RngStream(2024, k))
               for k in range(1, 20001)]
    report = validate_statistics(samples, kernel)
    assert report.z_cov < 3.0
    assert report.z_pseudo < 4.0
    assert report.z_mean < 4.0


def test_grid_factorization_identity_covariance():
    times = np.arange(6) * 1.0
    kernel = KernelGrid(times=times, values=np.eye(6, dtype=complex))
    samples = np.stack([
        sample_grid_factorization(kernel, RngStream(3, k)).values
        for k in range(1, 20001)
    ])
    cov = samples.T @ samples.conj() / len(samples)
    assert np.allclose(cov, np.eye(6), atol=0.05)
    pseudo = samples.T @ samples / len(samples)
    assert np.max(np.abs(pseudo)) < 0.05
    assert np.max(np.abs(samples.mean(axis=0))) < 0.03


def test_grid_factorization_scalar():
    kernel = KernelGrid(times=np.array([0.0]), values=np.array([[4.0 + 0j]]))
    vals = np.array([
        sample_grid_factorization(kernel, RngStream(4, k)).values[0]
        for k in range(1, 5001)
    ])
    assert np.isclose(np.mean(np.abs(vals) ** 2), 4.0, atol=0.25)


def test_strategies_agree_for_rank_one_kernel():
    bath = single_mode_bath(g=0.25, omega=1.0)
    probe = TimeGrid(t_max=4.0, dt=0.5)
    kernel = tabulate_kernel(bath, probe)
    n = 20000
    zm = np.stack([sample_mode_sum_T0(bath, probe, RngStream(5, k)).values
                   for k in range(1, n + 1)])
    factor = grid_factor(kernel)
    zg = np.stack([
        sample_grid_factorization(kernel, RngStream(6, k), factor=factor).values
        for k in range(1, n + 1)
    ])
    cov_m = zm.T @ zm.conj() / n
    cov_g = zg.T @ zg.conj() / n
    # both estimate the same covariance; compare within combined MC error
    scale = np.abs(kernel.covariance()).max()
    assert np.max(np.abs(cov_m - cov_g)) < 6 * scale / np.sqrt(n)


def test_validate_statistics_zero_case():
    times = np.arange(4) * 1.0
    kernel = KernelGrid(times=times, values=np.zeros((4, 4), dtype=complex))
    samples = [NoiseRealization(times=times, values=np.zeros(4, complex),
                                strategy="grid_factorization")
               for _ in range(200)]
    report = validate_statistics(samples, kernel)
    assert report.max_z == 0.0


def test_validate_statistics_negative_control():
    bath = single_mode_bath(g=0.25, omega=1.0)
    probe = TimeGrid(t_max=4.0, dt=0.5)
    samples = [sample_mode_sum_T0(bath, probe, RngStream(7, k))
               for k in range(1, 20001)]
    good = validate_statistics(samples, tabulate_kernel(bath, probe))
    assert good.max_z < 4.0
    doubled = single_mode_bath(g=0.5, omega=1.0)
    bad = validate_statistics(samples, tabulate_kernel(doubled, probe))
    assert bad.z_cov > 10.0


def test_validate_statistics_requires_common_grid():
    bath = single_mode_bath()
    probe = TimeGrid(t_max=4.0, dt=0.5)
    other = TimeGrid(t_max=4.0, dt=1.0)
    samples = [sample_mode_sum_T0(bath, probe, RngStream(8, k))
               for k in range(1, 101)]
    samples[-1] = sample_mode_sum_T0(bath, other, RngStream(8, 999))
    with pytest.raises(ValueError):
        validate_statistics(samples, tabulate_kernel(bath, probe))


def test_determinism_bit_identical():
    bath = BathModel(modes=(BathMode(g=0.2, omega=0.8),
                            BathMode(g=0.1, omega=1.7)), temperature=0.5)
    a = sample_thermal_mode_sum(bath, GRID, RngStream(99, 3))
    b = sample_thermal_mode_sum(bath, GRID, RngStream(99, 3))
    assert np.array_equal(a.values, b.values)
    c = sample_thermal_mode_sum(bath, GRID, RngStream(99, 4))
    assert not np.array_equal(a.values, c.values)


def test_analytic_evaluation_matches_grid_values():
    bath = single_mode_bath(temperature=0.0)
    nz = sample_mode_sum_T0(bath, GRID, RngStream(11, 1))
    assert np.allclose(nz.eval_at(GRID.times), nz.values)
    stage = nz.stage_values(GRID)
    assert np.allclose(stage[0::2], nz.values)


def test_grid_only_stage_values_nearest_node():
    times = GRID.times
    vals = (np.arange(len(times)) + 1.0).astype(complex)
    nz = NoiseRealization(times=times, values=vals, strategy="grid_factorization")
    stage = nz.stage_values(GRID)
    assert np.array_equal(stage[0::2], vals)
    assert np.array_equal(stage[1::2], vals[:-1])
    with pytest.raises(ValueError):
        nz.eval_at(np.array([0.3]))
