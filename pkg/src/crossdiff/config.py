"""Flat ``section.key = value`` run configuration.

Every key has a typed default; unknown keys, bad values and duplicates raise
:class:`ConfigError` naming the key.  Environment variables
``CROSSDIFF_<SECTION>__<KEY>`` override file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .grid import Grid, StateW
from .model import (
    InfluenceModel,
    ReactionModel,
    complex_model,
    constant_model,
    heat_model,
    perona_malik,
    rotation_model,
    zero_model,
)
from .schemes import SchemeConfig

ENV_PREFIX = "CROSSDIFF_"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _words(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _str(text: str) -> str:
    return text.strip()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "grid.cells": (_ints, (16, 16)),
    "grid.lower": (_floats, ()),
    "grid.upper": (_floats, ()),
    "model.preset": (_str, "heat"),
    "model.diffusivity": (float, 1.0),
    "model.g": (float, 1.0),
    "model.f": (float, 0.5),
    "model.kappa": (float, 0.1),
    "model.matrix": (_floats, (1.0, -1.0, 1.0, 1.0)),
    "model.d": (_floats, (1.0, 0.0, 0.0, 1.0)),
    "reaction.lambda1": (float, 0.0),
    "reaction.lambda2": (float, 0.0),
    "scheme.name": (_str, "aos"),
    "scheme.solver": (_str, "banded"),
    "scheme.theta": (float, 1.0),
    "scheme.dt": (float, 0.001),
    "scheme.steps": (int, 10),
    "scheme.parallel": (_bool, False),
    "init.kind": (_str, "random"),
    "init.seed": (int, 0),
    "init.path": (_str, ""),
    "init.u": (float, 1.0),
    "init.v": (float, 0.0),
    "output.dir": (_str, "out"),
    "output.stride": (int, 1),
    "output.snapshots": (_bool, True),
    "check.eta": (float, 1e-6),
    "check.bound": (float, 10.0),
    "check.probes": (int, 8),
    "compare.cap": (int, 20_000),
    "spy.direction": (int, 1),
    "spy.line": (int, 0),
    "bench.schemes": (_words, ("full", "aos", "amos")),
    "bench.solvers": (_words, ("dense", "banded")),
    "bench.sizes": (_ints, (16, 32)),
    "bench.dim": (int, 2),
    "bench.warmup": (int, 1),
    "bench.repetitions": (int, 3),
    "bench.full_cap": (int, 20_000),
    "bench.whole_step": (_bool, False),
}

PRESETS = ("zero", "heat", "rotation", "scaled", "complex", "perona_malik", "constant")
INIT_KINDS = ("random", "constant", "bump", "file")


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    # -- derived objects --------------------------------------------------

    def grid(self) -> Grid:
        cells = self["grid.cells"]
        lower = self["grid.lower"] or None
        upper = self["grid.upper"] or None
        try:
            return Grid(cells, lower, upper)
        except ValueError as exc:
            raise ConfigError("grid.cells", str(exc)) from None

    def model(self) -> InfluenceModel:
        p = self["model.preset"]
        if p == "zero":
            return zero_model()
        if p == "heat":
            return heat_model(self["model.diffusivity"])
        if p in ("rotation", "scaled"):
            m = self["model.matrix"]
            if len(m) != 4:
                raise ConfigError("model.matrix", "needs 4 comma-separated entries")
            return rotation_model(self["model.g"], np.reshape(m, (2, 2)))
        if p == "complex":
            return complex_model(self["model.g"], self["model.f"])
        if p == "perona_malik":
            return complex_model(perona_malik(self["model.kappa"], self["model.g"]), self["model.f"])
        d = self["model.d"]
        if len(d) != 4:
            raise ConfigError("model.d", "needs 4 comma-separated entries")
        return constant_model(*d)

    def reaction(self) -> ReactionModel:
        try:
            return ReactionModel.constant(self["reaction.lambda1"], self["reaction.lambda2"])
        except ValueError as exc:
            raise ConfigError("reaction.lambda1", str(exc)) from None

    def scheme(self) -> SchemeConfig:
        try:
            return SchemeConfig(theta=self["scheme.theta"], dt=self["scheme.dt"], scheme=self["scheme.name"],
                                solver=self["scheme.solver"], steps=self["scheme.steps"],
                                parallel=self["scheme.parallel"])
        except ValueError as exc:
            msg = str(exc)
            key = next((k for k in ("solver", "theta", "dt", "steps") if k in msg), "name")
            raise ConfigError(f"scheme.{key}", msg) from None

    def initial_state(self) -> StateW:
        from .fieldio import FieldFormatError, read_fields

        grid = self.grid()
        kind = self["init.kind"]
        if kind == "file":
            path = self["init.path"]
            try:
                U, V = read_fields(path)
            except (OSError, FieldFormatError) as exc:
                raise ConfigError("init.path", str(exc)) from None
            if U.shape != grid.shape:
                raise ConfigError("init.path", f"field shape {U.shape} does not match grid nodes {grid.shape}")
        elif kind == "constant":
            U = np.full(grid.shape, self["init.u"])
            V = np.full(grid.shape, self["init.v"])
        elif kind == "bump":
            x = grid.coordinates()
            centre = [0.5 * (lo + hi) for lo, hi in zip(grid.lower, grid.upper)]
            r2 = sum(((xi - c) / (hi - lo)) ** 2 for xi, c, lo, hi in zip(x, centre, grid.lower, grid.upper))
            U = self["init.u"] * np.exp(-20.0 * r2)
            V = self["init.v"] * np.exp(-20.0 * r2)
        else:
            rng = np.random.default_rng(self["init.seed"])
            U = rng.random(grid.shape)
            V = rng.random(grid.shape)
        return StateW(grid, U, V)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())


def _convert(key: str, text: str):
    parser, _ = SCHEMA[key]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(key, f"invalid value {text.strip()!r} ({exc})") from None


def parse_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form section.key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = _convert(key, value)
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name[len(ENV_PREFIX):]:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        full = f"{section}.{key}"
        if full not in SCHEMA:
            raise ConfigError(full, f"unknown configuration key (from environment {name})")
        out[full] = _convert(full, value)
    return out


def validate(values: dict[str, Any]) -> None:
    if values["model.preset"] not in PRESETS:
        raise ConfigError("model.preset", f"unknown preset {values['model.preset']!r}; expected one of {PRESETS}")
    if values["init.kind"] not in INIT_KINDS:
        raise ConfigError("init.kind", f"unknown kind {values['init.kind']!r}; expected one of {INIT_KINDS}")
    if values["init.kind"] == "file" and not values["init.path"]:
        raise ConfigError("init.path", "required when init.kind = file")
    if len(values["grid.cells"]) not in (2, 3):
        raise ConfigError("grid.cells", "need 2 or 3 comma-separated cell counts")
    if any(c < 1 for c in values["grid.cells"]):
        raise ConfigError("grid.cells", "cell counts must be >= 1")
    for key in ("grid.lower", "grid.upper"):
        if values[key] and len(values[key]) != len(values["grid.cells"]):
            raise ConfigError(key, "must have one entry per axis")
    if values["output.stride"] < 1:
        raise ConfigError("output.stride", "must be >= 1")
    if values["scheme.steps"] < 0:
        raise ConfigError("scheme.steps", "must be >= 0")
    if values["bench.dim"] not in (2, 3):
        raise ConfigError("bench.dim", "must be 2 or 3")
    if values["bench.repetitions"] < 1:
        raise ConfigError("bench.repetitions", "must be >= 1")
    if values["spy.direction"] < 1 or values["spy.direction"] > len(values["grid.cells"]):
        raise ConfigError("spy.direction", "must name an existing axis (1-based)")
    if not values["check.bound"] > 1.0:
        raise ConfigError("check.bound", "must exceed 1")


def load_config(path=None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> RunConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        values.update(parse_text(text))
    values.update(env_overrides(environ))
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _convert(key, value) if isinstance(value, str) else value
    validate(values)
    cfg = RunConfig(values)
    # build the derived objects once so that bad combinations fail before any work
    cfg.scheme()
    cfg.model()
    cfg.reaction()
    return cfg


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "PRESETS", "load_config", "parse_text", "env_overrides"]
