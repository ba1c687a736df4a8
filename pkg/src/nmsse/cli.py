"""Command-line entry point.

    nmsse <experiment> --config <path> [--out <dir>] [--seed <u64>]
                       [--trajectories <N>]

Experiments: validate-noise, trajectory, ensemble, oracle, markov-limit,
bargmann-identity.  Every run writes plot-ready CSV files plus a JSON
manifest (config echo, seed, per-check pass/fail, timings); the exit code
is 0 when all built-in checks pass, 1 on a check failure, and 2 on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .ensemble import EnsembleConfig, convergence_report, run_ensemble
from .model import recurrence_time, tabulate_kernel
from .noise import (
    RngStream,
    realization_to_csv_rows,
    sample_grid_factorization,
    grid_factor,
    sample_mode_sum_T0,
    sample_thermal_mode_sum,
    validate_statistics,
)
from .numerics import TimeGrid, hermiticity_defect
from .oracle import (
    bargmann_project_series,
    dephasing_reference,
    lindblad_solve,
    propagate_total,
    reduced_density,
    thermal_reduced_dynamics,
)
from .solver import (
    closure_bargmann,
    closure_born,
    closure_dephasing,
    run_trajectory_batch,
)

EXPERIMENTS = ("validate-noise", "trajectory", "ensemble", "oracle",
               "markov-limit", "bargmann-identity")

# Stream index base for oracle-side sampling, far above any trajectory index.
ORACLE_STREAM_BASE = 1 << 40

MAX_PROBE_POINTS = 17


class UsageError(Exception):
    """Maps to exit code 2 (bad invocation, config, or incompatibility)."""


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _check(name: str, passed: bool, value, threshold) -> dict:
    return {
        "name": name,
        "passed": bool(passed),
        "value": None if value is None else float(value),
        "threshold": None if threshold is None else float(threshold),
    }


def _probe_grid(grid: TimeGrid) -> TimeGrid:
    stride = max(1, -(-grid.n_steps // (MAX_PROBE_POINTS - 1)))  # ceil div
    n_probe = grid.n_steps // stride
    return TimeGrid(t_max=n_probe * stride * grid.dt, dt=stride * grid.dt)


def _sampler(cfg: ExperimentConfig, bath, grid):
    if cfg.noise_strategy == "mode_sum":
        if bath.temperature != 0.0:
            raise UsageError("mode_sum noise requires a zero-temperature bath")
        return lambda stream: sample_mode_sum_T0(bath, grid, stream)
    if cfg.noise_strategy == "thermal_mode_sum":
        return lambda stream: sample_thermal_mode_sum(bath, grid, stream)
    kernel = tabulate_kernel(bath, grid)
    factor = grid_factor(kernel)
    return lambda stream: sample_grid_factorization(kernel, stream, factor=factor)


def _build_closure(cfg: ExperimentConfig, sys_model, bath, grid):
    if cfg.closure == "dephasing":
        return closure_dephasing(sys_model, bath)
    if cfg.closure == "born":
        return closure_born(sys_model, tabulate_kernel(bath, grid))
    layout = cfg.build_layout()
    return closure_bargmann(sys_model, bath, layout)


def _reference(cfg: ExperimentConfig, sys_model, bath, grid, psi0):
    """Reference density series per cfg.compare, or None."""
    if cfg.compare == "none":
        return None
    if cfg.compare == "lindblad":
        if cfg.comb is None:
            raise UsageError("compare = lindblad requires a comb bath")
        rho0 = np.outer(psi0, psi0.conj())
        return lindblad_solve(sys_model, cfg.comb[0], rho0, grid)
    if cfg.compare == "dephasing_analytic":
        return dephasing_reference(sys_model, bath, psi0, grid)
    # oracle
    if bath.temperature == 0.0:
        layout = cfg.build_layout()
        states = propagate_total(sys_model, bath, layout, psi0, grid)
        return reduced_density(states)
    layout = cfg.build_layout()
    n_samples = cfg.oracle_samples or cfg.n_trajectories
    return thermal_reduced_dynamics(
        sys_model, bath, layout, psi0, grid, n_samples,
        RngStream(cfg.master_seed, ORACLE_STREAM_BASE),
    )


def _rho_csv_rows(times, rho, stderr=None, trace=None, trace_stderr=None,
                  distances=None):
    t_len, d, _ = rho.shape
    for j in range(t_len):
        row = [times[j]]
        for a in range(d):
            for b in range(d):
                row += [rho[j, a, b].real, rho[j, a, b].imag]
        if stderr is not None:
            for a in range(d):
                for b in range(d):
                    row.append(stderr[j, a, b])
        if trace is not None:
            row.append(trace[j])
        if trace_stderr is not None:
            row.append(trace_stderr[j])
        if distances is not None:
            row.append(distances[j])
        yield row


def _rho_csv_header(d, stderr=False, trace=False, distances=None):
    head = ["t"]
    for a in range(d):
        for b in range(d):
            head += [f"re_rho_{a}{b}", f"im_rho_{a}{b}"]
    if stderr:
        for a in range(d):
            for b in range(d):
                head.append(f"stderr_rho_{a}{b}")
    if trace:
        head += ["trace", "trace_stderr"]
    if distances:
        head.append(f"trace_distance_{distances}")
    return head


def exp_validate_noise(cfg, out_dir: Path, timings: dict):
    bath = cfg.build_bath()
    grid = cfg.build_grid()
    probe = _probe_grid(grid)
    kernel = tabulate_kernel(bath, probe)
    sampler = _sampler(cfg, bath, probe)
    t0 = time.perf_counter()
    samples = [sampler(RngStream(cfg.master_seed, k))
               for k in range(1, cfg.n_trajectories + 1)]
    timings["sampling_s"] = time.perf_counter() - t0
    report = validate_statistics(samples, kernel)

    outputs = []
    if "csv" in cfg.output_formats:
        p = out_dir / "noise_covariance.csv"
        rows = []
        times = report.probe_times
        for j in range(len(times)):
            for k in range(len(times)):
                rows.append([
                    times[j], times[k],
                    report.cov[j, k].real, report.cov[j, k].imag,
                    report.cov_target[j, k].real, report.cov_target[j, k].imag,
                    report.cov_stderr[j, k],
                    report.pseudo[j, k].real, report.pseudo[j, k].imag,
                    report.pseudo_stderr[j, k],
                ])
        write_csv(p, ["t", "s", "re_cov", "im_cov", "re_target", "im_target",
                      "cov_stderr", "re_pseudo", "im_pseudo", "pseudo_stderr"],
                  rows)
        outputs.append(p.name)
        p2 = out_dir / "noise_mean.csv"
        write_csv(p2, ["t", "re_mean", "im_mean", "stderr"],
                  [[report.probe_times[j], report.mean[j].real,
                    report.mean[j].imag, report.mean_stderr[j]]
                   for j in range(len(report.probe_times))])
        outputs.append(p2.name)
        p3 = out_dir / "noise_realization.csv"
        write_csv(p3, ["t", "re_z", "im_z"], realization_to_csv_rows(samples[0]))
        outputs.append(p3.name)

    checks = [
        _check("noise_mean_zscore", report.z_mean < 4.0, report.z_mean, 4.0),
        _check("noise_pseudo_covariance_zscore", report.z_pseudo < 4.0,
               report.z_pseudo, 4.0),
        _check("noise_covariance_zscore", report.z_cov < 4.0, report.z_cov, 4.0),
    ]
    return checks, outputs


def exp_trajectory(cfg, out_dir: Path, timings: dict):
    sys_model = cfg.build_system()
    bath = cfg.build_bath()
    grid = cfg.build_grid()
    closure = _build_closure(cfg, sys_model, bath, grid)
    sampler = _sampler(cfg, bath, grid)
    noise = sampler(RngStream(cfg.master_seed, 1))
    t0 = time.perf_counter()
    try:
        states = run_trajectory_batch(sys_model, closure, [noise], grid,
                                      cfg.initial_state)[0]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    timings["integration_s"] = time.perf_counter() - t0

    outputs = []
    if "csv" in cfg.output_formats:
        d = sys_model.dim
        header = ["t"]
        for i in range(d):
            header += [f"re_psi_{i}", f"im_psi_{i}"]
        header.append("norm_sq")
        rows = []
        for j, t in enumerate(grid.times):
            row = [t]
            for i in range(d):
                row += [states[j, i].real, states[j, i].imag]
            row.append(float(np.real(np.vdot(states[j], states[j]))))
            rows.append(row)
        p = out_dir / "trajectory.csv"
        write_csv(p, header, rows)
        outputs.append(p.name)
        p2 = out_dir / "noise_realization.csv"
        write_csv(p2, ["t", "re_z", "im_z"], realization_to_csv_rows(noise))
        outputs.append(p2.name)

    finite = bool(np.all(np.isfinite(states.view(np.float64))))
    return [_check("trajectory_finite", finite, None, None)], outputs


def _trace_check(result) -> dict:
    dev = np.abs(result.trace - 1.0)
    stderr = result.trace_stderr
    ok = np.all((dev <= 4.0 * stderr) | ((stderr == 0) & (dev <= 1e-12)))
    worst = float(np.max(np.where(stderr > 0, dev / np.where(stderr > 0, stderr, 1),
                                  np.where(dev <= 1e-12, 0.0, np.inf))))
    return _check("mean_trace_within_4_stderr", bool(ok), worst, 4.0)


def _run_ensemble_common(cfg, timings: dict):
    sys_model = cfg.build_system()
    bath = cfg.build_bath()
    grid = cfg.build_grid()
    closure = _build_closure(cfg, sys_model, bath, grid)
    econf = EnsembleConfig(
        n_trajectories=cfg.n_trajectories, master_seed=cfg.master_seed,
        noise_strategy=cfg.noise_strategy, workers=cfg.workers,
    )
    t0 = time.perf_counter()
    try:
        result = run_ensemble(sys_model, bath, econf, closure, grid,
                              cfg.initial_state)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    timings["ensemble_s"] = time.perf_counter() - t0
    return sys_model, bath, grid, result


def exp_ensemble(cfg, out_dir: Path, timings: dict):
    sys_model, bath, grid, result = _run_ensemble_common(cfg, timings)
    t0 = time.perf_counter()
    target = _reference(cfg, sys_model, bath, grid, cfg.initial_state)
    timings["reference_s"] = time.perf_counter() - t0

    checks = [
        _trace_check(result),
        _check("hermitization_asymmetry",
               result.diagnostics["hermitization_asymmetry"] < 1e-9,
               result.diagnostics["hermitization_asymmetry"], 1e-9),
    ]
    distances = None
    if target is not None:
        rep = convergence_report(result, target)
        distances = rep.trace_distances
        checks.append(_check(f"trace_distance_to_{cfg.compare}",
                             rep.max_trace_distance < cfg.tolerance,
                             rep.max_trace_distance, cfg.tolerance))

    outputs = []
    if "csv" in cfg.output_formats:
        d = sys_model.dim
        p = out_dir / "ensemble_rho.csv"
        write_csv(
            p,
            _rho_csv_header(d, stderr=True, trace=True,
                            distances=cfg.compare if target is not None else None),
            _rho_csv_rows(grid.times, result.rho_mean, result.rho_stderr,
                          result.trace, result.trace_stderr, distances),
        )
        outputs.append(p.name)
    return checks, outputs


def exp_oracle(cfg, out_dir: Path, timings: dict):
    sys_model = cfg.build_system()
    bath = cfg.build_bath()
    grid = cfg.build_grid()
    layout = cfg.build_layout()
    t0 = time.perf_counter()
    if bath.temperature == 0.0:
        states = propagate_total(sys_model, bath, layout, cfg.initial_state, grid)
        rho = reduced_density(states)
    else:
        n_samples = cfg.oracle_samples or cfg.n_trajectories
        rho = thermal_reduced_dynamics(
            sys_model, bath, layout, cfg.initial_state, grid, n_samples,
            RngStream(cfg.master_seed, ORACLE_STREAM_BASE),
        )
    timings["oracle_s"] = time.perf_counter() - t0

    traces = np.array([np.real(np.trace(r)) for r in rho])
    trace_dev = float(np.max(np.abs(traces - 1.0)))
    min_eig = min(float(np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min())
                  for r in rho)
    asym = max(hermiticity_defect(r) for r in rho)
    checks = [
        _check("reduced_trace_unit", trace_dev < 1e-8, trace_dev, 1e-8),
        _check("reduced_psd", min_eig > -1e-10, min_eig, -1e-10),
        _check("reduced_hermitian", asym < 1e-9, asym, 1e-9),
    ]
    outputs = []
    if "csv" in cfg.output_formats:
        p = out_dir / "oracle_rho.csv"
        write_csv(p, _rho_csv_header(sys_model.dim),
                  _rho_csv_rows(grid.times, rho))
        outputs.append(p.name)
    return checks, outputs


def exp_markov_limit(cfg, out_dir: Path, timings: dict):
    if cfg.comb is None:
        raise UsageError("markov-limit requires a comb bath ([bath] comb = ...)")
    if cfg.closure != "dephasing":
        raise UsageError("markov-limit requires the dephasing closure")
    bath = cfg.build_bath()
    t_rec = recurrence_time(bath)
    if cfg.t_max > 0.5 * t_rec:
        raise UsageError(
            f"horizon t_max={cfg.t_max} is not well inside the bath recurrence "
            f"time {t_rec:.3g}; shorten it or densify the comb"
        )
    sys_model, bath, grid, result = _run_ensemble_common(cfg, timings)
    rho0 = np.outer(cfg.initial_state, cfg.initial_state.conj())
    target = lindblad_solve(sys_model, cfg.comb[0], rho0, grid)
    rep = convergence_report(result, target)
    checks = [
        _trace_check(result),
        _check("trace_distance_to_lindblad",
               rep.max_trace_distance < cfg.tolerance,
               rep.max_trace_distance, cfg.tolerance),
    ]
    outputs = []
    if "csv" in cfg.output_formats:
        p = out_dir / "markov_limit_rho.csv"
        write_csv(
            p,
            _rho_csv_header(sys_model.dim, stderr=True, trace=True,
                            distances="lindblad"),
            _rho_csv_rows(grid.times, result.rho_mean, result.rho_stderr,
                          result.trace, result.trace_stderr,
                          rep.trace_distances),
        )
        outputs.append(p.name)
    return checks, outputs


def exp_bargmann_identity(cfg, out_dir: Path, timings: dict):
    if cfg.closure != "bargmann":
        raise UsageError("bargmann-identity requires solver.closure = bargmann")
    if cfg.noise_strategy != "mode_sum":
        raise UsageError("bargmann-identity requires mode_sum noise")
    sys_model = cfg.build_system()
    bath = cfg.build_bath()
    if bath.temperature != 0.0:
        raise UsageError("bargmann-identity requires a zero-temperature bath")
    grid = cfg.build_grid()
    layout = cfg.build_layout()
    closure = closure_bargmann(sys_model, bath, layout)
    n = min(cfg.n_trajectories, 100)

    t0 = time.perf_counter()
    states = propagate_total(sys_model, bath, layout, cfg.initial_state, grid)
    timings["oracle_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rows = []
    worst = 0.0
    for k in range(1, n + 1):
        noise = sample_mode_sum_T0(bath, grid, RngStream(cfg.master_seed, k))
        solver_states = run_trajectory_batch(sys_model, closure, [noise], grid,
                                             cfg.initial_state)[0]
        oracle_states = bargmann_project_series(states, noise.coherent_sample,
                                                bath, rotate=True)
        diff = float(np.max(np.linalg.norm(solver_states - oracle_states, axis=1)))
        worst = max(worst, diff)
        rows.append([k, diff])
    timings["comparison_s"] = time.perf_counter() - t0

    outputs = []
    if "csv" in cfg.output_formats:
        p = out_dir / "bargmann_identity.csv"
        write_csv(p, ["sample", "max_state_diff"], rows)
        outputs.append(p.name)
    checks = [_check("per_realization_identity", worst < 1e-6, worst, 1e-6)]
    return checks, outputs


_RUNNERS = {
    "validate-noise": exp_validate_noise,
    "trajectory": exp_trajectory,
    "ensemble": exp_ensemble,
    "oracle": exp_oracle,
    "markov-limit": exp_markov_limit,
    "bargmann-identity": exp_bargmann_identity,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nmsse",
        description="Stochastic trajectory experiments for open-system dynamics",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    parser.add_argument("--trajectories", type=int, default=None,
                        help="trajectory/sample count override")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    started = time.perf_counter()
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.trajectories is not None:
            cfg = dataclasses.replace(cfg, n_trajectories=args.trajectories)
        out_dir = Path(args.out) if args.out else Path(cfg.output_directory)
        out_dir.mkdir(parents=True, exist_ok=True)

        timings: dict = {}
        checks, outputs = _RUNNERS[args.experiment](cfg, out_dir, timings)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    timings["total_s"] = time.perf_counter() - started
    manifest = {
        "experiment": args.experiment,
        "seed": cfg.master_seed,
        "config": serialize_config(cfg),
        "checks": checks,
        "timings": timings,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": outputs,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n",
                             encoding="utf-8")

    all_passed = all(c["passed"] for c in checks)
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        extra = ""
        if c["value"] is not None and c["threshold"] is not None:
            extra = f" (value {c['value']:.6g}, threshold {c['threshold']:.6g})"
        print(f"[{status}] {c['name']}{extra}")
    print(f"manifest: {manifest_path}")
    if not all_passed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
