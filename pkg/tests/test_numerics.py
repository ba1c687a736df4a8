import numpy as np
import pytest

from nmsse.numerics import (
    DimensionCapError,
    SpaceLayout,
    TimeGrid,
    fock_leak_fractions,
    fock_monomial_weights,
    fock_occupations,
    partial_trace_env,
    tensor_product,
    trace_distance,
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)


def random_density(rng, d):
    m = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = m @ m.conj().T
    return rho / np.trace(rho)


def test_tensor_product_identities():
    assert np.array_equal(tensor_product(np.eye(2), np.eye(3)), np.eye(6))
    out = tensor_product(np.diag([1.0, 2.0]), np.eye(2))
    assert np.array_equal(out, np.diag([1.0, 1.0, 2.0, 2.0]))


def test_tensor_product_involution():
    xx = tensor_product(SIGMA_X, SIGMA_X)
    assert np.allclose(xx @ xx, np.eye(4))


def test_tensor_product_mixed_product_rule():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, c = rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2))
        b, d = rng.standard_normal((2, 3, 3)) + 1j * rng.standard_normal((2, 3, 3))
        lhs = tensor_product(a, b) @ tensor_product(c, d)
        rhs = tensor_product(a @ c, b @ d)
        assert np.allclose(lhs, rhs)


def test_tensor_product_associative_up_to_reshape():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 2)) + 0j
    b = rng.standard_normal((3, 3)) + 0j
    c = rng.standard_normal((2, 2)) + 0j
    assert np.allclose(tensor_product(tensor_product(a, b), c),
                       tensor_product(a, tensor_product(b, c)))


def test_tensor_product_dimension_cap():
    with pytest.raises(DimensionCapError):
        tensor_product(np.eye(300), np.eye(300), dim_cap=1000)


def test_partial_trace_product_state():
    rng = np.random.default_rng(2)
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(2, 1))
    rho_sys = random_density(rng, 2)
    rho_env = random_density(rng, layout.env_dim)
    total = np.kron(rho_sys, rho_env)
    assert np.allclose(partial_trace_env(total, layout), rho_sys, atol=1e-12)


def test_partial_trace_maximally_mixed():
    layout = SpaceLayout(system_dim=3, mode_cutoffs=(3,))
    total = np.eye(layout.total_dim) / layout.total_dim
    assert np.allclose(partial_trace_env(total, layout), np.eye(3) / 3)


def test_partial_trace_preserves_trace_and_linearity():
    rng = np.random.default_rng(3)
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(2,))
    d = layout.total_dim
    m1 = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    m1 = m1 + m1.conj().T
    m2 = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    r1, r2 = partial_trace_env(m1, layout), partial_trace_env(m2, layout)
    assert np.allclose(np.trace(r1), np.trace(m1))
    combo = partial_trace_env(2.0 * m1 + (1 - 2j) * m2, layout)
    assert np.allclose(combo, 2.0 * r1 + (1 - 2j) * r2)


def test_partial_trace_psd():
    rng = np.random.default_rng(4)
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(3,))
    rho = random_density(rng, layout.total_dim)
    out = partial_trace_env(rho, layout)
    assert np.linalg.eigvalsh(out).min() >= -1e-10


def test_partial_trace_dimension_mismatch():
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(2,))
    with pytest.raises(ValueError):
        partial_trace_env(np.eye(4), layout)


def test_trace_distance_examples():
    rho = np.diag([0.3, 0.7]).astype(complex)
    assert trace_distance(rho, rho) == 0.0
    assert np.isclose(trace_distance(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])), 1.0)
    assert np.isclose(trace_distance(np.diag([0.5, 0.5]), np.diag([1.0, 0.0])), 0.5)


def test_trace_distance_properties():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a, b, c = (random_density(rng, 3) for _ in range(3))
        dab, dba = trace_distance(a, b), trace_distance(b, a)
        assert np.isclose(dab, dba)
        assert dab <= trace_distance(a, c) + trace_distance(c, b) + 1e-12
        assert 0.0 <= dab <= 1.0 + 1e-12


def test_trace_distance_rejects_non_hermitian():
    bad = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    with pytest.raises(ValueError):
        trace_distance(bad, np.eye(2))


def test_time_grid_divisibility():
    grid = TimeGrid(t_max=1.0, dt=0.05)
    assert grid.n_steps == 20
    assert np.isclose(grid.times[-1], 1.0)
    half = grid.half_times()
    assert len(half) == 41
    assert np.allclose(half[0::2], grid.times)
    with pytest.raises(ValueError):
        TimeGrid(t_max=1.0, dt=0.3)


def test_layout_indexing_and_occupations():
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(2, 1))
    assert layout.total_dim == 2 * 3 * 2
    occ = fock_occupations(layout)
    # mode order: first mode slowest within the environment factor
    assert occ[0].tolist() == [0, 0]
    assert occ[1].tolist() == [0, 1]
    assert occ[2].tolist() == [1, 0]
    assert occ[-1].tolist() == [2, 1]


def test_fock_monomial_weights_single_mode():
    layout = SpaceLayout(system_dim=1, mode_cutoffs=(3,))
    val = 0.4 - 0.3j
    w = fock_monomial_weights(layout, [val])
    expected = np.array([1.0, val, val**2 / np.sqrt(2.0), val**3 / np.sqrt(6.0)])
    assert np.allclose(w, expected)


def test_fock_leak_fractions():
    layout = SpaceLayout(system_dim=1, mode_cutoffs=(2,))
    psi = np.array([1.0, 0.0, 1.0], dtype=complex)  # half the weight at top
    leaks = fock_leak_fractions(psi, layout)
    assert np.isclose(leaks[0], 0.5)
