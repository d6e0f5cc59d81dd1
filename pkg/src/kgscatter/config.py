"""Scenario configuration files (TOML).

A configuration has the tables ``[scenario]``, ``[spacetime]`` (coefficient
families, see :mod:`kgscatter.families`), ``[basis]``, ``[grid]``,
``[tolerances]``, ``[riccati]``, ``[states]``, ``[microlocal]`` and ``[run]``.
Every key has a default except the spacetime data, which default to the
ultrastatic unit case ``c = h = V = 1``, ``b = 0``.
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import tomli

from .errors import InvalidConfig

STAGES = ["reduce", "powers", "riccati", "frame", "evolve", "states", "microlocal", "report"]

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "scenario": {"name": "unnamed"},
    "spacetime": {"L": 6.283185307179586, "mu": 2.0, "c": 1.0, "b": 0.0, "h": 1.0, "V": 1.0},
    "basis": {"K": 32},
    "grid": {"t_min": -8.0, "t_max": 8.0, "n_nodes": 201},
    "tolerances": {"rtol": 1e-9, "gap_floor": 0.1, "p_threshold": 6.0, "r2_min": 0.9},
    "riccati": {"n_max": 4, "decay_window": [5.0, 40.0], "decay_samples": 8},
    "states": {"t_ref": 0.0, "samples": "5:40:12", "scheme": "frame", "n_source": 241,
               "hadamard_window": [], "directions": ["out", "in"]},
    "evolve": {"pairs": 20, "span": 8.0},
    "microlocal": {"x0": 1.0, "k0": 16.0, "sigma": 0.3, "sign": 1, "t_launch": 0.0,
                   "t_final": 4.0},
    "run": {"stages": ["all"], "out": "out", "seed": 0},
}

_TYPES = {
    ("basis", "K"): int,
    ("grid", "t_min"): float, ("grid", "t_max"): float, ("grid", "n_nodes"): int,
    ("tolerances", "rtol"): float, ("tolerances", "gap_floor"): float,
    ("tolerances", "p_threshold"): float, ("tolerances", "r2_min"): float,
    ("riccati", "n_max"): int, ("riccati", "decay_samples"): int,
    ("states", "t_ref"): float, ("states", "n_source"): int, ("states", "scheme"): str,
    ("evolve", "pairs"): int, ("evolve", "span"): float,
    ("microlocal", "x0"): float, ("microlocal", "k0"): float, ("microlocal", "sigma"): float,
    ("microlocal", "sign"): int, ("microlocal", "t_launch"): float,
    ("microlocal", "t_final"): float,
    ("run", "seed"): int, ("run", "out"): str,
}


def parse_samples(text) -> List[float]:
    """``"lo:hi:n"`` (geometric) or an explicit list of positive times."""
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            lo, hi, n = str(text).split(":")
            lo, hi, n = float(lo), float(hi), int(n)
        except ValueError as exc:
            raise InvalidConfig(f"samples must look like 'lo:hi:n', got {text!r}",
                                field="states.samples") from exc
        if not (0 < lo < hi) or n < 2:
            raise InvalidConfig("samples need 0 < lo < hi and n >= 2", field="states.samples")
        import numpy as np
        vals = [float(v) for v in np.geomspace(lo, hi, n)]
    if any(v <= 0 for v in vals) or sorted(vals) != vals:
        raise InvalidConfig("sample times must be positive and increasing", field="states.samples")
    return vals


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "spacetime":
            out[k] = _merge(out[k], v, f"{path}{k}.")
        elif isinstance(v, dict) and k == "spacetime":
            sp = copy.deepcopy(out[k])
            sp.update(v)
            out[k] = sp
        else:
            out[k] = v
    return out


@dataclass
class Config:
    data: Dict[str, Any]
    source: Optional[str] = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def stages(self) -> List[str]:
        req = self.data["run"]["stages"]
        if isinstance(req, str):
            req = [s.strip() for s in req.split(",") if s.strip()]
        if "all" in req:
            return list(STAGES)
        bad = [s for s in req if s not in STAGES]
        if bad:
            raise InvalidConfig(f"unknown stage(s) {bad}; expected a subset of {STAGES}",
                                field="run.stages")
        return [s for s in STAGES if s in req]

    def physics(self) -> dict:
        """The part of the configuration that determines numerical results."""
        return {k: v for k, v in self.data.items() if k not in ("run", "scenario")} | \
            {"seed": self.data["run"]["seed"]}

    def hash(self) -> str:
        blob = json.dumps(self.physics(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, k_override=None, tol_scale=None, seed=None, stages=None,
                       out=None) -> "Config":
        d = copy.deepcopy(self.data)
        if k_override is not None:
            d["basis"]["K"] = int(k_override)
        if tol_scale is not None:
            if tol_scale <= 0:
                raise InvalidConfig("tol-scale must be positive", field="--tol-scale")
            d["tolerances"]["rtol"] = d["tolerances"]["rtol"] * float(tol_scale)
        if seed is not None:
            d["run"]["seed"] = int(seed)
        if stages is not None:
            d["run"]["stages"] = stages
        if out is not None:
            d["run"]["out"] = str(out)
        cfg = Config(d, self.source)
        validate(cfg)
        return cfg


def validate(cfg: Config) -> None:
    """Type and range checks with dotted field names in the messages."""
    d = cfg.data
    unknown = set(d) - set(DEFAULTS)
    if unknown:
        raise InvalidConfig(f"unknown table(s) {sorted(unknown)}", field=sorted(unknown)[0])
    for (sec, key), typ in _TYPES.items():
        val = d[sec].get(key)
        try:
            if typ is int and (isinstance(val, bool) or float(val) != int(val)):
                raise ValueError
            d[sec][key] = typ(val)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"{sec}.{key} must be {typ.__name__}, got {val!r}",
                                field=f"{sec}.{key}") from exc
    if d["basis"]["K"] < 2:
        raise InvalidConfig("basis.K must be at least 2", field="basis.K")
    g = d["grid"]
    if not g["t_min"] < 0 < g["t_max"]:
        raise InvalidConfig("the grid must contain t = 0 in its interior", field="grid")
    if g["n_nodes"] < 9 or g["n_nodes"] % 2 == 0:
        raise InvalidConfig("grid.n_nodes must be odd and at least 9 (t = 0 is a node)",
                            field="grid.n_nodes")
    if abs(g["t_min"] + g["t_max"]) > 1e-12:
        raise InvalidConfig("the grid must be symmetric about t = 0", field="grid")
    if d["states"]["scheme"] not in ("frame", "vacuum"):
        raise InvalidConfig("states.scheme must be 'frame' or 'vacuum'", field="states.scheme")
    if d["microlocal"]["sign"] not in (1, -1):
        raise InvalidConfig("microlocal.sign must be +1 or -1", field="microlocal.sign")
    parse_samples(d["states"]["samples"])
    cfg.stages  # noqa: B018 - validates the stage list


def load_config(path) -> Config:
    """Read, merge with defaults and validate a TOML configuration."""
    path = Path(path)
    try:
        raw = tomli.loads(path.read_text())
    except FileNotFoundError as exc:
        raise InvalidConfig(f"configuration file {path} not found") from exc
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    return from_dict(raw, str(path))


def from_dict(raw: dict, source: Optional[str] = None) -> Config:
    cfg = Config(_merge(DEFAULTS, raw), source)
    validate(cfg)
    return cfg
