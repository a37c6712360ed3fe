"""TOML configuration files for game instances and run settings.

Layout (all sections except ``[model]``, ``[sigma]`` and the control grids
are optional)::

    [model]        name, dim, horizon, x0, theta
    [sigma]        family = "constant" | "affine-bounded"; matrix; kappa
    [drift]        family = "zero" | "affine" | "table"; A, B1, B2, c, table
    [cost.1]       family = "constant" | "clipped-power" | "quadratic";
                   c0, a, k, power, cap, Ru, Rv, W
    [cost.2]
    [terminal.1]   family = "constant" | "clipped-power"; c0, a, k, power, cap
    [terminal.2]
    [controls.1]   points = [[...], ...]   or   lo, hi, n
    [controls.2]
    [constants]    gamma, C_sigma, C_f, C_h, C_g, C_b, C_1, C_2
    [bounded_drift] family = "zero" | "constant" | "clipped-identity"; c, scale, bound
    [solver]       n_paths, n_steps, ladder, basis, seed, picard
    [verify]       n_paths, deviations, seed
    [diagnose]     n_paths, n_steps, seed, q_list, lam, l, p_grid
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from .model import (
    BoundedDriftSpec,
    ControlGrid,
    CostSpec,
    DiffusionSpec,
    DriftSpec,
    GameModel,
    ModelConstants,
    TerminalSpec,
    derive_constants,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed or incomplete configuration."""


_CONST_KEYS = ("C_sigma", "C_f", "C_h", "C_g", "C_b", "C_1", "C_2")


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _section(cfg: dict, *keys: str, required: bool = True) -> dict:
    node: Any = cfg
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            if required:
                raise ConfigError(f"missing section [{'.'.join(keys)}]")
            return {}
        node = node[k]
    if not isinstance(node, dict):
        raise ConfigError(f"[{'.'.join(keys)}] must be a table")
    return node


def _array(sec: dict, key: str, default=None):
    if key not in sec:
        return default
    try:
        arr = np.array(sec[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} is not numeric: {sec[key]!r}") from exc
    return arr


def _grid(sec: dict, name: str) -> ControlGrid:
    try:
        if "points" in sec:
            return ControlGrid(np.array(sec["points"], dtype=float))
        if {"lo", "hi", "n"} <= set(sec):
            return ControlGrid.linspace(float(sec["lo"]), float(sec["hi"]), int(sec["n"]))
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc
    raise ConfigError(f"[{name}] needs 'points' or 'lo', 'hi', 'n'")


def _cost(sec: dict, name: str) -> CostSpec:
    family = sec.get("family", "constant")
    kw = dict(
        c0=float(sec.get("c0", 0.0)),
        a=_array(sec, "a"),
        k=float(sec.get("k", 0.0)),
        power=float(sec.get("power", 1.0)),
        cap=float(sec.get("cap", math.inf)),
    )
    if family == "quadratic":
        kw.update(Ru=_array(sec, "Ru"), Rv=_array(sec, "Rv"), W=_array(sec, "W"))
    try:
        return CostSpec(family, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _terminal(sec: dict, name: str) -> TerminalSpec:
    family = sec.get("family", "constant")
    try:
        return TerminalSpec(
            family,
            c0=float(sec.get("c0", 0.0)),
            a=_array(sec, "a"),
            k=float(sec.get("k", 0.0)),
            power=float(sec.get("power", 1.0)),
            cap=float(sec.get("cap", math.inf)),
        )
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def model_from_config(cfg: dict) -> GameModel:
    """Build a :class:`GameModel`; raises :class:`ConfigError` on malformed input."""
    msec = _section(cfg, "model")
    try:
        m = int(msec["dim"])
        T = float(msec["horizon"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[model] needs integer 'dim' and real 'horizon': {exc}") from exc
    x0 = _array(msec, "x0", np.zeros(m))

    ssec = _section(cfg, "sigma")
    sfam = ssec.get("family", "constant")
    mat = _array(ssec, "matrix")
    if mat is None:
        mat = float(ssec.get("scale", 1.0)) * np.eye(m)
    try:
        sigma = DiffusionSpec(sfam, np.atleast_2d(mat), kappa=float(ssec.get("kappa", 0.0)))
    except ValueError as exc:
        raise ConfigError(f"[sigma]: {exc}") from exc

    dsec = _section(cfg, "drift", required=False)
    dfam = dsec.get("family", "zero")
    try:
        drift = DriftSpec(
            dfam,
            A=_array(dsec, "A"),
            B1=_array(dsec, "B1"),
            B2=_array(dsec, "B2"),
            c=_array(dsec, "c"),
            table=_array(dsec, "table"),
        )
    except ValueError as exc:
        raise ConfigError(f"[drift]: {exc}") from exc

    costs = tuple(_cost(_section(cfg, "cost", str(i), required=False), f"cost.{i}") for i in (1, 2))
    terms = tuple(_terminal(_section(cfg, "terminal", str(i), required=False), f"terminal.{i}") for i in (1, 2))
    grids = tuple(_grid(_section(cfg, "controls", str(i)), f"controls.{i}") for i in (1, 2))

    bsec = _section(cfg, "bounded_drift", required=False)
    try:
        bdrift = BoundedDriftSpec(
            bsec.get("family", "zero"),
            c=_array(bsec, "c"),
            scale=float(bsec.get("scale", 1.0)),
            bound=float(bsec.get("bound", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"[bounded_drift]: {exc}") from exc

    try:
        model = GameModel(
            dim_m=m,
            horizon_T=T,
            x0=x0,
            sigma=sigma,
            drift_f=drift,
            running_costs=costs,
            terminal_costs=terms,
            control_grid_1=grids[0],
            control_grid_2=grids[1],
            theta=float(msec.get("theta", 1.0)),
            bounded_drift=bdrift,
            name=str(msec.get("name", "game")),
        )
        csec = _section(cfg, "constants", required=False)
        gamma = float(csec.get("gamma", 1.5))
        derived = derive_constants(model, gamma=gamma)
        overrides = {k: float(csec[k]) for k in _CONST_KEYS if k in csec}
        constants = ModelConstants(**{**{k: getattr(derived, k) for k in _CONST_KEYS}, **overrides, "gamma": gamma})
        # sigma/drift/cost dimension mismatches surface as ValueError on first use
        model = model.replace(constants=constants)
        model.drift_all(0.0, model.x0[None])
        model.running_all(1, 0.0, model.x0[None])
        model.running_all(2, 0.0, model.x0[None])
        model.terminal(1, model.x0[None])
        model.terminal(2, model.x0[None])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"inconsistent model: {exc}") from exc
    return model


def load_model(path) -> tuple[GameModel, dict]:
    cfg = read_config(path)
    return model_from_config(cfg), cfg
