"""Sectioned key-value run configuration.

The format is deliberately small: `[section]` headers, `key = value`
lines, `#` comments, blank lines.  Unknown sections or keys are
rejected with the offending line number, so typos fail before any
compute starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config",
           "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Parse or validation failure; message carries line/key context."""


def _as_float(s):
    return float(s)


def _as_int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _as_str(s):
    return s


def _as_float_list(s):
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return [float(p) for p in parts]


def _as_bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


# section -> key -> (caster, default); None default means "must be set
# by the command that needs it", checked at use time not parse time
_SCHEMA = {
    "kernel": {
        "family": (_as_str, "brownian"),      # brownian | killed | fd
        "ell": (_as_float, float("-inf")),
        "z0": (_as_float, 0.0),
        "sigma": (_as_float, 1.0),
        "space_steps": (_as_int, 801),        # fd family only
        "time_steps": (_as_int, 2000),
    },
    "grid": {
        "nodes": (_as_int, 1601),
        "z_upper": (_as_float, 8.0),
    },
    "solver": {
        "eps": (_as_float, None),
        "eps_list": (_as_float_list, None),
        "tol": (_as_float, 1e-10),
        "max_iter": (_as_int, 100_000),
    },
    "sim": {
        "tag": (_as_str, "reference"),
        "paths": (_as_int, 10_000),
        "steps": (_as_int, 2000),
        "seed": (_as_int, 0),
        "delta_sim": (_as_float, 1e-3),
        "snapshot_times": (_as_float_list, [0.25, 0.5, 0.75]),
        "store_paths": (_as_bool, False),
        "dump_paths": (_as_bool, False),
        "z1_fixed": (_as_float, None),
    },
    "sweep": {
        "paths": (_as_int, 0),
        "gap_t": (_as_int, 10),
        "gap_x": (_as_int, 21),
    },
    "output": {
        "dir": (_as_str, "out"),
    },
}

_VALID_FAMILIES = ("brownian", "killed", "fd")
_VALID_TAGS = ("reference", "unconstrained_bridge", "constrained",
               "five_lemma", "limit", "classical_kyle")


@dataclass
class RunConfig:
    """Validated configuration; one flat dict per section."""

    kernel: dict = dc_field(default_factory=dict)
    grid: dict = dc_field(default_factory=dict)
    solver: dict = dc_field(default_factory=dict)
    sim: dict = dc_field(default_factory=dict)
    sweep: dict = dc_field(default_factory=dict)
    output: dict = dc_field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def validate(self):
        k = self.kernel
        if k["family"] not in _VALID_FAMILIES:
            raise ConfigError(
                f"kernel.family must be one of {_VALID_FAMILIES}, "
                f"got {k['family']!r}")
        if k["family"] in ("killed", "fd") and not np.isfinite(k["ell"]):
            raise ConfigError(f"kernel.family={k['family']} needs a finite ell")
        if k["sigma"] <= 0:
            raise ConfigError("kernel.sigma must be positive")
        if np.isfinite(k["ell"]) and k["z0"] <= k["ell"]:
            raise ConfigError("kernel.z0 must lie above ell")
        if self.grid["nodes"] < 8:
            raise ConfigError("grid.nodes must be >= 8")
        if self.grid["z_upper"] <= 0:
            raise ConfigError("grid.z_upper must be positive")
        s = self.solver
        if s["eps"] is not None and s["eps"] <= 0:
            raise ConfigError("solver.eps must be positive")
        if s["eps_list"] is not None:
            e = s["eps_list"]
            if any(v <= 0 for v in e):
                raise ConfigError("solver.eps_list values must be positive")
            if any(b >= a for a, b in zip(e, e[1:])):
                raise ConfigError("solver.eps_list must be strictly decreasing")
        if s["tol"] <= 0 or s["max_iter"] < 1:
            raise ConfigError("solver.tol must be positive, max_iter >= 1")
        sim = self.sim
        if sim["tag"] not in _VALID_TAGS:
            raise ConfigError(
                f"sim.tag must be one of {_VALID_TAGS}, got {sim['tag']!r}")
        if sim["paths"] < 1:
            raise ConfigError("sim.paths must be positive")
        if sim["steps"] < 100:
            raise ConfigError("sim.steps must be >= 100")
        if not 0 <= sim["seed"] < 2 ** 64:
            raise ConfigError("sim.seed must fit in 64 bits")
        if not 0.0 < sim["delta_sim"] <= 0.01:
            raise ConfigError("sim.delta_sim must lie in (0, 0.01]")
        if self.sweep["paths"] < 0:
            raise ConfigError("sweep.paths must be >= 0")
        return self


def parse_config(text: str, name: str = "<config>") -> RunConfig:
    """Parse and validate; raises ConfigError with line diagnostics."""
    sections = {sec: {key: dv for key, (_, dv) in keys.items()}
                for sec, keys in _SCHEMA.items()}
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sec = line[1:-1].strip()
            if sec not in _SCHEMA:
                raise ConfigError(
                    f"{name}:{ln}: unknown section [{sec}]; "
                    f"valid sections: {', '.join(_SCHEMA)}")
            current = sec
            continue
        if "=" not in line:
            raise ConfigError(f"{name}:{ln}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{name}:{ln}: key outside any [section]")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA[current]:
            raise ConfigError(
                f"{name}:{ln}: unknown key {key!r} in [{current}]; "
                f"valid keys: {', '.join(_SCHEMA[current])}")
        caster, _ = _SCHEMA[current][key]
        try:
            sections[current][key] = caster(val)
        except ValueError as exc:
            raise ConfigError(f"{name}:{ln}: bad value for {current}.{key}: {exc}")
    return RunConfig(**sections).validate()


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), name=str(path))


DEFAULT_CONFIG = """\
# runnable starter configuration (eps and tag are choices, not schema
# defaults; omitted keys keep theirs)
[kernel]
family = brownian      # brownian | killed | fd
ell = -inf             # absorption level (killed / fd families)
z0 = 0.0
sigma = 1.0

[grid]
nodes = 1601
z_upper = 8.0

[solver]
eps = 0.5
tol = 1e-10
max_iter = 100000

[sim]
tag = constrained
paths = 10000
steps = 2000
seed = 0
delta_sim = 1e-3
snapshot_times = 0.25, 0.5, 0.75

[output]
dir = out
"""
