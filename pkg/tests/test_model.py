import numpy as np
import pytest

from nmsse.model import (
    BathMode,
    BathModel,
    KernelGrid,
    SystemModel,
    build_total_hamiltonian,
    kernel_alpha,
    markov_reference_bath,
    recurrence_time,
    tabulate_kernel,
)
from nmsse.numerics import SpaceLayout, TimeGrid

SZ = np.diag([1.0, -1.0]).astype(complex)


def single_mode_bath(g=0.25, omega=1.0, temperature=0.0):
    return BathModel(modes=(BathMode(g=g, omega=omega),), temperature=temperature)


def test_kernel_alpha_zero_temperature_values():
    bath = single_mode_bath()
    assert np.isclose(kernel_alpha(bath, 0.0, 0.0), 0.25)
    assert np.isclose(kernel_alpha(bath, np.pi / 2, 0.0), -0.25j, atol=1e-12)


def test_kernel_alpha_coth_value():
    # coth(1/20): series oracle 1/x + x/3 - x^3/45 at x = 0.05
    x = 0.05
    series = 1 / x + x / 3 - x**3 / 45
    bath = single_mode_bath(g=1.0, omega=1.0, temperature=10.0)
    val = kernel_alpha(bath, 1.3, 1.3)
    assert np.isclose(val.imag, 0.0, atol=1e-14)
    assert np.isclose(val.real, series, atol=1e-4)
    assert np.isclose(val.real, 20.0166638895501, atol=1e-10)


def test_kernel_hermitian_and_stationary():
    bath = BathModel(
        modes=(BathMode(g=0.2, omega=0.7), BathMode(g=0.05, omega=2.3)),
        temperature=1.1,
    )
    rng = np.random.default_rng(0)
    for _ in range(10):
        t, s, shift = rng.uniform(0, 5, size=3)
        assert np.isclose(kernel_alpha(bath, t, s),
                          np.conj(kernel_alpha(bath, s, t)))
        assert np.isclose(kernel_alpha(bath, t + shift, s + shift),
                          kernel_alpha(bath, t, s))


def test_kernel_single_mode_t0_pure_phase():
    bath = single_mode_bath(g=0.3, omega=1.4)
    ts = np.linspace(0, 6, 13)
    mags = np.abs(kernel_alpha(bath, ts, np.zeros_like(ts)))
    assert np.allclose(mags, abs(kernel_alpha(bath, 0.0, 0.0)))


def test_tabulate_kernel_empty_bath():
    bath = BathModel(modes=(), temperature=0.0)
    grid = TimeGrid(t_max=1.0, dt=0.25)
    kg = tabulate_kernel(bath, grid)
    assert np.all(kg.values == 0)


def test_tabulate_kernel_rank_one():
    bath = single_mode_bath(g=0.25, omega=1.0)
    grid = TimeGrid(t_max=2.0, dt=0.1)
    kg = tabulate_kernel(bath, grid)
    lam = np.sort(np.linalg.eigvalsh(kg.covariance()))
    n = len(grid.times)
    assert np.isclose(lam[-1], n * 0.25)
    assert np.allclose(lam[:-1], 0.0, atol=1e-12)


def test_tabulate_kernel_equal_time_diagonal():
    bath = BathModel(
        modes=(BathMode(g=0.2, omega=0.7), BathMode(g=0.05, omega=2.3)),
        temperature=0.4,
    )
    kg = tabulate_kernel(bath, TimeGrid(t_max=1.0, dt=0.1))
    diag = np.diag(kg.values)
    assert np.allclose(diag.imag, 0.0, atol=1e-14)
    assert np.allclose(diag, diag[0])


def test_kernel_grid_rejects_indefinite():
    times = np.array([0.0, 1.0])
    values = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    kg = KernelGrid(times=times, values=values)
    with pytest.raises(ValueError, match="not PSD|negative"):
        kg.check_psd()


def test_total_hamiltonian_coupling_entry():
    sys_model = SystemModel(hamiltonian=np.zeros((2, 2), dtype=complex),
                            coupling=SZ)
    bath = single_mode_bath(g=0.25, omega=1.0)  # kappa = 0.5
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(1,))
    h = build_total_hamiltonian(sys_model, bath, layout)
    # <sys=0, n=1 | H | sys=0, n=0> = -kappa <1|a + a^dag|0> <0|sz|0>
    assert np.isclose(h[1, 0], -0.5)
    # environment number term on the diagonal
    assert np.isclose(h[1, 1], 1.0)


def test_total_hamiltonian_no_modes():
    h_sys = np.array([[0.3, 0.1], [0.1, -0.3]], dtype=complex)
    sys_model = SystemModel(hamiltonian=h_sys, coupling=SZ)
    bath = BathModel(modes=(), temperature=0.0)
    layout = SpaceLayout(system_dim=2, mode_cutoffs=())
    assert np.allclose(build_total_hamiltonian(sys_model, bath, layout), h_sys)


def test_total_hamiltonian_hermitian_random():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    h_sys = m + m.conj().T
    c = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    coupling = c + c.conj().T
    sys_model = SystemModel(hamiltonian=h_sys, coupling=coupling)
    bath = BathModel(modes=(BathMode(g=0.3, omega=1.2),
                            BathMode(g=0.1, omega=0.5)), temperature=0.0)
    layout = SpaceLayout(system_dim=3, mode_cutoffs=(3, 2))
    h = build_total_hamiltonian(sys_model, bath, layout)
    assert np.allclose(h, h.conj().T)


def test_total_hamiltonian_layout_mismatch():
    sys_model = SystemModel(hamiltonian=np.zeros((2, 2), dtype=complex),
                            coupling=SZ)
    bath = single_mode_bath()
    layout = SpaceLayout(system_dim=2, mode_cutoffs=(2, 2))
    with pytest.raises(ValueError):
        build_total_hamiltonian(sys_model, bath, layout)


def test_markov_reference_bath_construction():
    gamma, n_modes, omega_max = 0.4, 64, 16.0
    bath = markov_reference_bath(gamma, n_modes, omega_max)
    assert bath.n_modes == n_modes
    assert bath.temperature == 0.0
    assert np.isclose(bath.couplings().sum(), gamma * omega_max / np.pi)
    domega = omega_max / n_modes
    assert np.allclose(bath.frequencies(),
                       domega * np.arange(1, n_modes + 1))


def test_markov_bath_half_integral_plateau():
    # A(t) = int_0^t alpha(tau) dtau by trapezoid quadrature of the kernel
    # (independent of the closed form used by the solver): real part must
    # sit within 10% of gamma/2 well inside [1/omega_max, recurrence time].
    gamma, n_modes, omega_max = 0.4, 96, 24.0
    bath = markov_reference_bath(gamma, n_modes, omega_max)
    t_rec = recurrence_time(bath)
    assert np.isclose(t_rec, 2 * np.pi / (omega_max / n_modes))
    # probe window: a few kernel correlation times up to a few percent of
    # the recurrence time (the comb deviates linearly beyond that)
    tau = np.linspace(0.0, 0.04 * t_rec, 4000)
    alpha = kernel_alpha(bath, tau, np.zeros_like(tau))
    a_half = np.cumsum((alpha[1:] + alpha[:-1]) / 2) * (tau[1] - tau[0])
    window = (tau[1:] >= 2.0 / omega_max)
    rel = np.abs(a_half[window].real - gamma / 2) / (gamma / 2)
    assert rel.max() < 0.10


def test_bath_validation():
    with pytest.raises(ValueError):
        BathMode(g=-0.1, omega=1.0)
    with pytest.raises(ValueError):
        BathMode(g=0.1, omega=0.0)
    with pytest.raises(ValueError):
        BathModel(modes=(BathMode(g=0.1, omega=1.0),), temperature=-1.0)
    bath = single_mode_bath(temperature=0.0)
    assert bath.occupations()[0] == 0.0
