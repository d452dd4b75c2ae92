"""Experiment configuration: JSON files validated against a schema.

Frequencies and rates are entered as ``f / 2 pi`` with the unit in the key
name (``U_MHz``, ``gamma_kHz``, ``omega_GHz``) and converted to rad/us on
load. Each value is a scalar or a per-site list (per-bond for ``J``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .model import DephasingModel, FockSpace, FockState, ModelParams

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "UNIT_SCALE"]

UNIT_SCALE = {"GHz": 2 * math.pi * 1e3, "MHz": 2 * math.pi, "kHz": 2 * math.pi * 1e-3}
PARAM_NAMES = ("omega", "U", "J", "gamma", "kappa")

_number_or_list = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
    ]
}
_param_props = {f"{name}_{unit}": _number_or_list for name in PARAM_NAMES for unit in UNIT_SCALE}

SCHEMA = {
    "type": "object",
    "required": ["chain", "params", "initial_state"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "chain": {
            "type": "object",
            "required": ["L"],
            "additionalProperties": False,
            "properties": {
                "L": {"type": "integer", "minimum": 1},
                "d_max": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **_param_props,
                "rotating_frame": {"type": "boolean"},
                "dephasing": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "model": {"enum": ["number", "exponential"]},
                        "a": _number_or_list,
                    },
                },
            },
        },
        "initial_state": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "required": ["superposition"],
                    "additionalProperties": False,
                    "properties": {
                        "superposition": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "required": ["state"],
                                "additionalProperties": False,
                                "properties": {
                                    "state": {"type": "string"},
                                    "re": {"type": "number"},
                                    "im": {"type": "number"},
                                },
                            },
                        }
                    },
                },
            ]
        },
        "evolution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["master", "trajectories"]},
                "integrator": {"enum": ["auto", "expm", "chebyshev", "rk45"]},
                "t_max_us": {"type": "number", "exclusiveMinimum": 0},
                "n_points": {"type": "integer", "minimum": 2},
                "n_traj": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "postselect_N": {"type": ["integer", "null"], "minimum": 0},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "observables": {"type": "array", "items": {"type": "string"}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["csv"]},
                "jump_log": {"type": "boolean"},
                "dump_states": {"type": "boolean"},
            },
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pairs": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "checks": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["kind"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {"enum": ["sector_law", "manifold_rates", "trajectory_vs_master"]},
                            "tol": {"type": "number", "exclusiveMinimum": 0},
                            "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                        },
                    },
                }
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    name: str
    L: int
    d_max: int | None
    params: ModelParams
    initial: dict  # FockState -> complex amplitude (unnormalised)
    method: str = "master"
    integrator: str = "auto"
    t_max_us: float = 1.0
    n_points: int = 101
    n_traj: int = 1000
    seed: int = 0
    postselect_N: int | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    observables: list[str] = field(default_factory=list)
    output_path: str = "run"
    jump_log: bool = False
    dump_states: bool = False
    pairs: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        Ns = {s.total for s in self.initial}
        return Ns.pop()

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max_us, self.n_points)

    def space(self) -> FockSpace:
        """Sectors 0..N when dissipation is on, otherwise the initial sector alone."""
        Ns = range(self.N + 1) if np.any(self.params.gamma > 0) else [self.N]
        return FockSpace.build(self.L, Ns, self.d_max)

    def resolved(self) -> dict:
        """Plain-data summary of every resolved setting (rad/us units)."""
        p = self.params
        return {
            "name": self.name,
            "L": self.L,
            "d_max": self.d_max,
            "omega_rad_per_us": p.omega.tolist(),
            "U_rad_per_us": p.U.tolist(),
            "J_rad_per_us": p.J.tolist(),
            "gamma_per_us": p.gamma.tolist(),
            "kappa_per_us": p.kappa.tolist(),
            "rotating_frame": p.rotating_frame,
            "dephasing_model": p.dephasing.kind,
            "dephasing_a": p.dephasing.a if isinstance(p.dephasing.a, float) else list(p.dephasing.a),
            "initial_state": {s.digits(): [c.real, c.imag] for s, c in self.initial.items()},
            "method": self.method,
            "integrator": self.integrator,
            "t_max_us": self.t_max_us,
            "n_points": self.n_points,
            "n_traj": self.n_traj,
            "seed": self.seed,
            "postselect_N": self.postselect_N,
            "observables": self.observables,
        }


def _field_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(x) for x in err.absolute_path) or "<root>"


def _param(block: dict, name: str, length: int, default: float | None):
    keys = [k for k in block if k.rsplit("_", 1)[0] == name and k.rsplit("_", 1)[-1] in UNIT_SCALE]
    if len(keys) > 1:
        raise ConfigError(f"params: {name} given in more than one unit ({', '.join(sorted(keys))})")
    if not keys:
        if default is None:
            raise ConfigError(f"params: missing {name} (e.g. {name}_MHz)")
        return default
    key = keys[0]
    scale = UNIT_SCALE[key.rsplit("_", 1)[1]]
    val = np.asarray(block[key], dtype=float) * scale
    if val.ndim == 1 and val.size not in (1, length):
        raise ConfigError(f"params/{key}: expected a scalar or {length} values, got {val.size}")
    return val


def _initial_state(spec, L: int) -> dict:
    try:
        if isinstance(spec, str):
            return {FockState.parse(spec, L): 1.0 + 0j}
        out: dict = {}
        for i, item in enumerate(spec["superposition"]):
            s = FockState.parse(item["state"], L)
            out[s] = out.get(s, 0j) + complex(item.get("re", 0.0), item.get("im", 0.0))
    except ValueError as exc:
        raise ConfigError(f"initial_state: {exc}") from exc
    if not any(abs(c) > 0 for c in out.values()):
        raise ConfigError("initial_state: all weights are zero")
    out = {s: c for s, c in out.items() if c != 0}
    if len({s.total for s in out}) != 1:
        raise ConfigError("initial_state: superpositions must stay within one photon-number sector")
    return out


def parse_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        msg = "; ".join(f"{_field_path(e)}: {e.message}" for e in errors[:5])
        raise ConfigError(f"{source}: {msg}")
    L = data["chain"]["L"]
    d_max = data["chain"].get("d_max")
    pb = data["params"]
    deph = pb.get("dephasing", {})
    a = deph.get("a", 0.0)
    a = tuple(float(x) for x in a) if isinstance(a, list) else float(a)
    try:
        params = ModelParams(
            L=L,
            U=_param(pb, "U", L, None),
            J=_param(pb, "J", max(L - 1, 1), 0.0 if L == 1 else None),
            omega=_param(pb, "omega", L, 0.0),
            gamma=_param(pb, "gamma", L, 0.0),
            kappa=_param(pb, "kappa", L, 0.0),
            rotating_frame=pb.get("rotating_frame", True),
            dephasing=DephasingModel(deph.get("model", "number"), a),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: params: {exc}") from exc
    initial = _initial_state(data["initial_state"], L)
    ev = data.get("evolution", {})
    out = data.get("output", {})
    name = data.get("name", Path(source).stem if source != "<config>" else "run")
    cfg = ExperimentConfig(
        name=name,
        L=L,
        d_max=d_max,
        params=params,
        initial=initial,
        method=ev.get("method", "master"),
        integrator=ev.get("integrator", "auto"),
        t_max_us=float(ev.get("t_max_us", 1.0)),
        n_points=int(ev.get("n_points", 101)),
        n_traj=int(ev.get("n_traj", 1000)),
        seed=int(ev.get("seed", 0)),
        postselect_N=ev.get("postselect_N"),
        rtol=float(ev.get("rtol", 1e-8)),
        atol=float(ev.get("atol", 1e-10)),
        observables=list(data.get("observables", [f"n_{k}" for k in range(1, L + 1)])),
        output_path=out.get("path", name),
        jump_log=bool(out.get("jump_log", False)),
        dump_states=bool(out.get("dump_states", False)),
        pairs=[tuple(FockState.parse(x, L) for x in pr) for pr in data.get("predict", {}).get("pairs", [])],
        checks=list(data.get("compare", {}).get("checks", [])),
        raw=data,
    )
    if d_max is not None and d_max < cfg.N:
        raise ConfigError(f"chain/d_max: {d_max} is below the photon number {cfg.N}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data, str(path))
