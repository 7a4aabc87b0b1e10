"""Experiment configuration: TOML parsing, validation, object builders.

A config file is a single TOML document with ``[experiment]``, ``[domain]``,
``[noise]``, ``[initial]``, ``[time]`` and optional ``[grid]``, ``[viscous]``,
``[run]`` and ``[checks]`` tables.  Validation is strict about the handful of
contracts the runners rely on (positive step count, power-of-two cells,
at least one path, referenced files present); everything else has defaults.
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .characteristics import InitialProfile, negative_line, sine_wave, tabulated_profile
from .noise import (
    FourierCosMode,
    FourierSinMode,
    Line,
    LinearMode,
    NoiseBasis,
    TabulatedMode,
    Torus,
    fourier_pair_family,
)
from .paths import TimeGrid


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


EXPERIMENT_KINDS = (
    "spde",
    "characteristics",
    "crossing",
    "slope-moments",
    "shock-track",
    "max-principle",
    "blowup-criterion",
)

_FIELD_KINDS = ("spde", "shock-track", "max-principle", "blowup-criterion")


@dataclass
class ExperimentConfig:
    """Validated experiment description plus the raw parsed document."""

    kind: str
    master_seed: int
    n_paths: int
    output: Optional[str]
    data: dict
    sha256: str
    base_dir: Path

    @property
    def run_options(self) -> dict:
        return self.data.get("run", {})

    @property
    def checks(self) -> dict:
        return self.data.get("checks", {})


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = ExperimentConfig(
        kind="",
        master_seed=0,
        n_paths=0,
        output=None,
        data=data,
        sha256=hashlib.sha256(raw).hexdigest(),
        base_dir=path.resolve().parent,
    )
    _validate(cfg)
    exp = data["experiment"]
    cfg.kind = exp["kind"]
    cfg.master_seed = int(exp.get("master_seed", 0))
    cfg.n_paths = int(exp.get("n_paths", 1))
    cfg.output = exp.get("output")
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    data = cfg.data
    _require("experiment" in data, "missing [experiment] table")
    exp = data["experiment"]
    _require("kind" in exp, "experiment.kind is required")
    _require(exp["kind"] in EXPERIMENT_KINDS, f"unknown experiment kind {exp['kind']!r}")
    n_paths = exp.get("n_paths", 1)
    _require(isinstance(n_paths, int) and n_paths >= 1, "n_paths must be >= 1")
    seed = exp.get("master_seed", 0)
    _require(isinstance(seed, int) and 0 <= seed < 2**64, "master_seed must be a u64")

    _require("time" in data, "missing [time] table")
    time = data["time"]
    t0 = float(time.get("t0", 0.0))
    _require("t_end" in time, "time.t_end is required")
    t_end = float(time["t_end"])
    _require(t_end > t0, "time.t_end must exceed time.t0")
    if "dt" in time:
        _require(float(time["dt"]) > 0, "time.dt must be positive")
    elif "n_steps" in time:
        _require(int(time["n_steps"]) >= 1, "time.n_steps must be >= 1")
    else:
        raise ConfigError("time needs either dt or n_steps")

    _require("initial" in data, "missing [initial] table (no initial profile)")
    init = data["initial"]
    _require("kind" in init, "initial.kind is required")
    _require(
        init["kind"] in ("sine_wave", "negative_line", "riemann", "tabulated"),
        f"unknown initial profile kind {init['kind']!r}",
    )
    if init["kind"] == "tabulated":
        f = cfg.base_dir / init.get("file", "")
        _require(f.is_file(), f"initial.file not found: {f}")

    noise = data.get("noise", {})
    for record in noise.get("modes", []):
        kind = record.get("kind")
        _require(
            kind in ("linear", "fourier_sin", "fourier_cos", "tabulated"),
            f"unknown noise mode kind {kind!r}",
        )
        if kind == "tabulated":
            f = cfg.base_dir / record.get("file", "")
            _require(f.is_file(), f"noise mode file not found: {f}")
        if kind in ("fourier_sin", "fourier_cos"):
            _require(int(record.get("k", 0)) >= 1, "fourier mode k must be a positive integer")
    if "fourier_pairs" in noise:
        _require(int(noise["fourier_pairs"].get("k_max", 0)) >= 1, "fourier_pairs.k_max must be >= 1")

    if exp["kind"] in _FIELD_KINDS:
        _require("grid" in data, "missing [grid] table for a field experiment")
        n_cells = data["grid"].get("n_cells", 0)
        _require(
            isinstance(n_cells, int) and n_cells >= 2 and (n_cells & (n_cells - 1)) == 0,
            "grid.n_cells must be a power of two",
        )
    nu = float(data.get("viscous", {}).get("nu", 0.0))
    _require(nu >= 0.0, "viscous.nu must be nonnegative")
    if exp["kind"] == "max-principle":
        _require(nu > 0.0, "max-principle experiments need viscous.nu > 0")


def build_domain(cfg: ExperimentConfig):
    dom = cfg.data.get("domain", {})
    kind = dom.get("kind", "torus")
    if kind == "torus":
        return Torus(float(dom.get("length", 2.0 * math.pi)))
    if kind == "line":
        return Line(float(dom.get("x_min", -1.0)), float(dom.get("x_max", 1.0)))
    raise ConfigError(f"unknown domain kind {kind!r}")


def build_basis(cfg: ExperimentConfig) -> NoiseBasis:
    noise = cfg.data.get("noise", {})
    domain = build_domain(cfg)
    modes = []
    for record in noise.get("modes", []):
        kind = record["kind"]
        if kind == "linear":
            modes.append(LinearMode(float(record.get("alpha", 0.0)), float(record.get("beta", 0.0))))
        elif kind == "fourier_sin":
            modes.append(FourierSinMode(int(record["k"]), float(record.get("amp", 1.0))))
        elif kind == "fourier_cos":
            modes.append(FourierCosMode(int(record["k"]), float(record.get("amp", 1.0))))
        elif kind == "tabulated":
            modes.append(TabulatedMode.from_csv(cfg.base_dir / record["file"], domain))
    if "fourier_pairs" in noise:
        spec = noise["fourier_pairs"]
        k_max = int(spec["k_max"])
        scale = float(spec.get("scale", 1.0))
        modes.extend(fourier_pair_family(k_max, lambda k: scale / k**2))
    return NoiseBasis(modes, domain)


def build_profile(cfg: ExperimentConfig) -> InitialProfile:
    init = cfg.data["initial"]
    kind = init["kind"]
    if kind == "sine_wave":
        dom = build_domain(cfg)
        length = dom.length if isinstance(dom, Torus) else float(init.get("length", 1.0))
        return sine_wave(
            float(init.get("amplitude", 1.0)),
            int(init.get("wavenumber", 1)),
            length,
            float(init.get("offset", 0.0)),
        )
    if kind == "negative_line":
        return negative_line(float(init.get("slope", 1.0)), float(init.get("offset", 0.0)))
    if kind == "riemann":
        left = float(init.get("u_left", 1.0))
        right = float(init.get("u_right", 0.0))
        lo = float(init.get("rise_at", 0.1))
        hi = float(init.get("jump_at", 0.5))

        def u0(x):
            x = np.asarray(x, dtype=float)
            return np.where((x >= lo) & (x < hi), left, right)

        return InitialProfile(
            u0=u0,
            du0=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            descriptor=f"riemann(u_left={left}, u_right={right}, rise_at={lo}, jump_at={hi})",
        )
    if kind == "tabulated":
        data = np.loadtxt(cfg.base_dir / init["file"], delimiter=",", comments="#")
        return tabulated_profile(data[:, 0], data[:, 1], build_domain(cfg))
    raise ConfigError(f"unknown initial profile kind {kind!r}")


def build_time_grid(cfg: ExperimentConfig) -> TimeGrid:
    time = cfg.data["time"]
    t0 = float(time.get("t0", 0.0))
    t_end = float(time["t_end"])
    if "n_steps" in time:
        n_steps = int(time["n_steps"])
    else:
        n_steps = max(1, int(round((t_end - t0) / float(time["dt"]))))
    return TimeGrid(t0, t_end, n_steps)


def grid_cells(cfg: ExperimentConfig) -> int:
    return int(cfg.data["grid"]["n_cells"])


def viscosity(cfg: ExperimentConfig) -> float:
    return float(cfg.data.get("viscous", {}).get("nu", 0.0))


def viscous_method(cfg: ExperimentConfig) -> str:
    return cfg.data.get("viscous", {}).get("method", "spectral")
