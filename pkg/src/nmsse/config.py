"""Experiment configuration: strict line-oriented format.

Grammar::

    # full-line comments start with '#'
    [section]
    key = value
    matrix_key =
      [a+bi, c+di]
      [e+fi, g+hi]

Scalars are integers, floats, or complex numbers written ``a+bi``;
vectors are single-line bracketed lists; matrices are one bracketed row
per line.  Unknown sections or keys are rejected (silent typos in physics
parameters are the dominant user error), and every error names the
offending line or key path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BathMode, BathModel, SystemModel, markov_reference_bath
from .numerics import SpaceLayout, TimeGrid

CLOSURES = ("dephasing", "born", "bargmann")
STRATEGIES = ("mode_sum", "thermal_mode_sum", "grid_factorization")
COMPARISONS = ("none", "oracle", "lindblad", "dephasing_analytic")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Configuration syntax or schema violation."""


def _fmt_float(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    return f"{z.real:.17g}{z.imag:+.17g}i"


def _parse_complex(text: str, where: str) -> complex:
    cleaned = text.strip().replace(" ", "").replace("i", "j").replace("I", "j")
    try:
        return complex(cleaned)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse complex value {text!r}") from None


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse number {text!r}") from None


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse integer {text!r}") from None


def _parse_bracketed(text: str, where: str) -> list[complex]:
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ConfigError(f"{where}: expected a bracketed list, got {text!r}")
    inner = body[1:-1].strip()
    if not inner:
        return []
    return [_parse_complex(p, where) for p in inner.split(",")]


@dataclass(eq=False)
class ExperimentConfig:
    """Validated experiment description (see the preset files for examples)."""

    system_dim: int
    hamiltonian: np.ndarray
    coupling: np.ndarray
    initial_state: np.ndarray
    bath_mode_params: tuple            # ((g, omega), ...)
    temperature: float
    comb: tuple | None                 # (gamma, n_modes, omega_max) or None
    t_max: float
    dt: float
    noise_strategy: str
    closure: str
    fock_cutoffs: tuple | None
    n_trajectories: int
    master_seed: int
    compare: str = "none"
    tolerance: float = 0.02
    workers: int = 1
    oracle_samples: int | None = None
    output_directory: str = "runs"
    output_formats: tuple = ("csv", "json")

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and \
            serialize_config(self) == serialize_config(other)

    def build_system(self) -> SystemModel:
        return SystemModel(hamiltonian=self.hamiltonian, coupling=self.coupling)

    def build_bath(self) -> BathModel:
        if self.comb is not None:
            gamma, n_modes, omega_max = self.comb
            return markov_reference_bath(gamma, int(n_modes), omega_max)
        modes = tuple(BathMode(g=g, omega=w) for g, w in self.bath_mode_params)
        return BathModel(modes=modes, temperature=self.temperature)

    def build_grid(self) -> TimeGrid:
        return TimeGrid(t_max=self.t_max, dt=self.dt)

    def build_layout(self) -> SpaceLayout:
        if self.fock_cutoffs is None:
            raise ConfigError(
                "solver.fock_cutoffs is required for this operation "
                "(oracle propagation / bargmann closure)"
            )
        return SpaceLayout(system_dim=self.system_dim,
                           mode_cutoffs=self.fock_cutoffs)


_SCHEMA = {
    "system": {"dim", "hamiltonian", "coupling", "initial_state"},
    "bath": {"temperature", "mode", "comb"},
    "grid": {"t_max", "dt"},
    "noise": {"strategy"},
    "solver": {"closure", "fock_cutoffs"},
    "ensemble": {"n_trajectories", "master_seed", "compare", "tolerance",
                 "workers", "oracle_samples"},
    "output": {"directory", "formats"},
}

_REQUIRED_SECTIONS = ("system", "bath", "grid", "noise", "solver", "ensemble")


def _tokenize(text: str):
    """Yield (lineno, section, key, value_lines) entries."""
    section = None
    entries = []
    pending = None  # entry collecting bracketed continuation rows
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            name = line[1:-1].strip()
            # Disambiguate '[section]' headers from bracketed matrix rows:
            # section names are known, matrix rows are not.
            if pending is not None and name not in _SCHEMA:
                pending[3].append((lineno, line))
                continue
            pending = None
            section = name
            entries.append((lineno, section, None, None))
            continue
        if line.startswith("[") and pending is not None:
            pending[3].append((lineno, line))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if section is None:
            raise ConfigError(f"line {lineno}: entry before any [section] header")
        entry = (lineno, section, key, [(lineno, value)] if value else [])
        entries.append(entry)
        pending = entry if not value else None
    return entries


def parse_config(text: str) -> ExperimentConfig:
    entries = _tokenize(text)
    data: dict = {}
    seen_sections = []
    for lineno, section, key, value_lines in entries:
        if key is None:
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            seen_sections.append(section)
            data.setdefault(section, {})
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {section}.{key}")
        bucket = data.setdefault(section, {})
        if key == "mode":
            bucket.setdefault("mode", []).append(value_lines)
        elif key in bucket:
            raise ConfigError(f"line {lineno}: duplicate key {section}.{key}")
        else:
            bucket[key] = value_lines
    for name in _REQUIRED_SECTIONS:
        if name not in data:
            raise ConfigError(f"missing required section [{name}]")
    return _build(data)


def _single_value(section, key, data, required=True):
    if key not in data[section]:
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return None
    lines = data[section][key]
    if len(lines) != 1:
        raise ConfigError(f"{section}.{key}: expected a single-line value")
    return lines[0][1]


def _matrix_value(section, key, data) -> np.ndarray:
    if key not in data[section]:
        raise ConfigError(f"missing required key {section}.{key}")
    lines = data[section][key]
    if not lines:
        raise ConfigError(f"{section}.{key}: empty matrix")
    rows = [_parse_bracketed(v, f"{section}.{key} (line {ln})") for ln, v in lines]
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError(f"{section}.{key}: ragged matrix rows")
    return np.array(rows, dtype=np.complex128)


def _build(data: dict) -> ExperimentConfig:
    where = "system.dim"
    dim = _parse_int(_single_value("system", "dim", data), where)
    if dim < 1:
        raise ConfigError(f"{where}: must be positive")

    ham = _matrix_value("system", "hamiltonian", data)
    cpl = _matrix_value("system", "coupling", data)
    for name, mat in (("system.hamiltonian", ham), ("system.coupling", cpl)):
        if mat.shape != (dim, dim):
            raise ConfigError(f"{name}: expected {dim}x{dim}, got {mat.shape}")
        asym = float(np.max(np.abs(mat - mat.conj().T)))
        scale = max(float(np.max(np.abs(mat))), 1e-300)
        if asym > 1e-9 * scale:
            raise ConfigError(
                f"{name}: matrix is not Hermitian (max asymmetry {asym:.3e})"
            )

    psi0 = np.array(
        _parse_bracketed(_single_value("system", "initial_state", data),
                         "system.initial_state"),
        dtype=np.complex128,
    )
    if psi0.shape != (dim,):
        raise ConfigError(f"system.initial_state: expected {dim} amplitudes")
    if np.linalg.norm(psi0) == 0:
        raise ConfigError("system.initial_state: zero vector")

    temperature = _parse_float(_single_value("bath", "temperature", data),
                               "bath.temperature")
    if temperature < 0:
        raise ConfigError("bath.temperature: must be nonnegative")

    mode_entries = data["bath"].get("mode", [])
    comb_text = _single_value("bath", "comb", data, required=False)
    if mode_entries and comb_text is not None:
        raise ConfigError("bath: 'mode' entries and 'comb' are mutually exclusive")
    if not mode_entries and comb_text is None:
        raise ConfigError("bath: need 'mode' entries or a 'comb' definition")

    modes = []
    for value_lines in mode_entries:
        ln, text = value_lines[0]
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"line {ln}: bath.mode expects 'g, omega'")
        g = _parse_float(parts[0], f"bath.mode (line {ln})")
        w = _parse_float(parts[1], f"bath.mode (line {ln})")
        if g <= 0 or w <= 0:
            raise ConfigError(f"line {ln}: bath.mode values must be positive")
        modes.append((g, w))

    comb = None
    if comb_text is not None:
        parts = [p.strip() for p in comb_text.split(",")]
        if len(parts) != 3:
            raise ConfigError("bath.comb expects 'gamma, n_modes, omega_max'")
        comb = (_parse_float(parts[0], "bath.comb"),
                _parse_int(parts[1], "bath.comb"),
                _parse_float(parts[2], "bath.comb"))
        if comb[0] <= 0 or comb[1] < 1 or comb[2] <= 0:
            raise ConfigError("bath.comb: values must be positive")
        if temperature != 0.0:
            raise ConfigError("bath.comb: the comb construction is T = 0 only")

    t_max = _parse_float(_single_value("grid", "t_max", data), "grid.t_max")
    dt = _parse_float(_single_value("grid", "dt", data), "grid.dt")
    if dt <= 0 or t_max <= 0:
        raise ConfigError("grid: t_max and dt must be positive")
    n = round(t_max / dt)
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(t_max, 1.0):
        raise ConfigError(f"grid: dt={dt} does not divide t_max={t_max}")

    strategy = _single_value("noise", "strategy", data)
    if strategy not in STRATEGIES:
        raise ConfigError(
            f"noise.strategy: {strategy!r} not in {sorted(STRATEGIES)}"
        )

    closure = _single_value("solver", "closure", data)
    if closure not in CLOSURES:
        raise ConfigError(f"solver.closure: {closure!r} not in {sorted(CLOSURES)}")

    cutoffs_text = _single_value("solver", "fock_cutoffs", data, required=False)
    cutoffs = None
    if cutoffs_text is not None:
        cutoffs = tuple(
            _parse_int(p, "solver.fock_cutoffs") for p in cutoffs_text.split(",")
        )
        if any(c < 1 for c in cutoffs):
            raise ConfigError("solver.fock_cutoffs: cutoffs must be positive")
        n_modes = comb[1] if comb else len(modes)
        if len(cutoffs) == 1 and n_modes > 1:
            cutoffs = cutoffs * n_modes
        if len(cutoffs) != n_modes:
            raise ConfigError(
                f"solver.fock_cutoffs: {len(cutoffs)} cutoffs for {n_modes} modes"
            )

    n_traj = _parse_int(_single_value("ensemble", "n_trajectories", data),
                        "ensemble.n_trajectories")
    if n_traj < 2:
        raise ConfigError("ensemble.n_trajectories: must be at least 2")
    seed = _parse_int(_single_value("ensemble", "master_seed", data),
                      "ensemble.master_seed")

    compare = _single_value("ensemble", "compare", data, required=False) or "none"
    if compare not in COMPARISONS:
        raise ConfigError(f"ensemble.compare: {compare!r} not in {sorted(COMPARISONS)}")
    tol_text = _single_value("ensemble", "tolerance", data, required=False)
    tolerance = _parse_float(tol_text, "ensemble.tolerance") if tol_text else 0.02
    workers_text = _single_value("ensemble", "workers", data, required=False)
    workers = _parse_int(workers_text, "ensemble.workers") if workers_text else 1
    osamp_text = _single_value("ensemble", "oracle_samples", data, required=False)
    oracle_samples = _parse_int(osamp_text, "ensemble.oracle_samples") \
        if osamp_text else None

    out_dir = "runs"
    out_formats: tuple = ("csv", "json")
    if "output" in data:
        d = _single_value("output", "directory", data, required=False)
        if d:
            out_dir = d
        f = _single_value("output", "formats", data, required=False)
        if f:
            out_formats = tuple(p.strip() for p in f.split(","))
            bad = [p for p in out_formats if p not in FORMATS]
            if bad:
                raise ConfigError(f"output.formats: unknown format(s) {bad}")

    return ExperimentConfig(
        system_dim=dim, hamiltonian=ham, coupling=cpl, initial_state=psi0,
        bath_mode_params=tuple(modes), temperature=temperature, comb=comb,
        t_max=t_max, dt=dt, noise_strategy=strategy,
        closure=closure, fock_cutoffs=cutoffs,
        n_trajectories=n_traj, master_seed=seed,
        compare=compare, tolerance=tolerance, workers=workers,
        oracle_samples=oracle_samples,
        output_directory=out_dir, output_formats=out_formats,
    )


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) == cfg."""
    lines = ["[system]", f"dim = {cfg.system_dim}"]
    for name, mat in (("hamiltonian", cfg.hamiltonian), ("coupling", cfg.coupling)):
        lines.append(f"{name} =")
        for row in mat:
            lines.append("  [" + ", ".join(_fmt_complex(z) for z in row) + "]")
    lines.append(
        "initial_state = ["
        + ", ".join(_fmt_complex(z) for z in cfg.initial_state) + "]"
    )
    lines += ["", "[bath]", f"temperature = {_fmt_float(cfg.temperature)}"]
    if cfg.comb is not None:
        gamma, n_modes, omega_max = cfg.comb
        lines.append(
            f"comb = {_fmt_float(gamma)}, {int(n_modes)}, {_fmt_float(omega_max)}"
        )
    else:
        for g, w in cfg.bath_mode_params:
            lines.append(f"mode = {_fmt_float(g)}, {_fmt_float(w)}")
    lines += ["", "[grid]",
              f"t_max = {_fmt_float(cfg.t_max)}", f"dt = {_fmt_float(cfg.dt)}"]
    lines += ["", "[noise]", f"strategy = {cfg.noise_strategy}"]
    lines += ["", "[solver]", f"closure = {cfg.closure}"]
    if cfg.fock_cutoffs is not None:
        lines.append("fock_cutoffs = " + ", ".join(str(c) for c in cfg.fock_cutoffs))
    lines += ["", "[ensemble]",
              f"n_trajectories = {cfg.n_trajectories}",
              f"master_seed = {cfg.master_seed}",
              f"compare = {cfg.compare}",
              f"tolerance = {_fmt_float(cfg.tolerance)}",
              f"workers = {cfg.workers}"]
    if cfg.oracle_samples is not None:
        lines.append(f"oracle_samples = {cfg.oracle_samples}")
    lines += ["", "[output]",
              f"directory = {cfg.output_directory}",
              "formats = " + ", ".join(cfg.output_formats)]
    return "\n".join(lines) + "\n"
