"""Benchmark the trajectory RK4 kernel: numba backend vs pure numpy.

Runs the same batched dephasing-style workload through both backends and
prints wall times plus the speedup.  The numpy path is vectorized across
the batch, so the gap narrows for large batches of tiny systems and widens
for long grids; both paths produce the same trajectories up to
floating-point reassociation (checked here).

Usage:
    python benchmarks/bench_kernels.py [--trajectories N] [--steps M]
                                       [--dim D] [--repeats R]
"""

import argparse
import time

import numpy as np

from nmsse import BathMode, BathModel, RngStream, SystemModel, TimeGrid
from nmsse import kernels
from nmsse.ensemble import CHUNK_SIZE
from nmsse.noise import sample_mode_sum_T0
from nmsse.solver import closure_dephasing


def build_workload(n_traj: int, n_steps: int, dim: int):
    h = np.diag(np.linspace(0.5, -0.5, dim)).astype(complex)
    l = np.diag(np.linspace(1.0, -1.0, dim)).astype(complex)
    sys_model = SystemModel(hamiltonian=h, coupling=l)
    bath = BathModel(modes=(BathMode(g=0.0625, omega=1.0),
                            BathMode(g=0.03, omega=1.7)), temperature=0.0)
    grid = TimeGrid(t_max=n_steps * 0.01, dt=0.01)
    closure = closure_dephasing(sys_model, bath)
    e_half = closure.stage_generator(grid)
    z_half = np.stack([
        sample_mode_sum_T0(bath, grid, RngStream(1, k)).stage_values(grid)
        for k in range(1, n_traj + 1)
    ])
    psi0 = np.ones(dim, dtype=complex) / np.sqrt(dim)
    return e_half, l, z_half, psi0, grid.dt


def run_backend(name: str, args_tuple, repeats: int, chunked: bool) -> tuple:
    e_half, l, z_half, psi0, dt = args_tuple
    previous = kernels.set_backend(name)
    try:
        # warm-up (JIT compilation for numba; cache effects for numpy)
        kernels.rk4_linear_batch(e_half, l, z_half[:2], psi0, dt)
        best = np.inf
        out = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            if chunked:
                parts = []
                for lo in range(0, z_half.shape[0], CHUNK_SIZE):
                    parts.append(kernels.rk4_linear_batch(
                        e_half, l, z_half[lo:lo + CHUNK_SIZE], psi0, dt))
                out = np.concatenate(parts)
            else:
                out = kernels.rk4_linear_batch(e_half, l, z_half, psi0, dt)
            best = min(best, time.perf_counter() - t0)
    finally:
        kernels.set_backend(previous)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trajectories", type=int, default=4096)
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--dim", type=int, default=2)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"workload: {args.trajectories} trajectories x {args.steps} RK4 "
          f"steps, system dim {args.dim}")
    work = build_workload(args.trajectories, args.steps, args.dim)

    t_numpy, out_numpy = run_backend("numpy", work, args.repeats, chunked=False)
    rows = [("numpy (vectorized batch)", t_numpy, 1.0)]

    if kernels.NUMBA_AVAILABLE:
        t_numba, out_numba = run_backend("numba", work, args.repeats,
                                         chunked=False)
        rows.append(("numba @njit", t_numba, t_numpy / t_numba))
        diff = float(np.max(np.abs(out_numba - out_numpy)))
        print(f"max |numba - numpy| on final states: {diff:.3e}")
    else:
        print("numba not available; only the numpy path was timed")

    print(f"{'backend':<28}{'best wall time [s]':>20}{'speedup':>10}")
    for name, t, speedup in rows:
        print(f"{name:<28}{t:>20.4f}{speedup:>10.2f}")


if __name__ == "__main__":
    main()
