"""JSON run configuration: schema, validation and object builders."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import functions as F
from .barriers import PerturbationSpec
from .grid import Boundary, Lattice
from .model import (
    LevyMeasure, LevyModel, SampleSpec, SwitchingProblem, gauss_legendre_measure,
    tempered_stable_density,
)
from .montecarlo import SimConfig
from .nonlocal_ops import NonlocalConfig
from .scheme import SolverConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed, schema-violating or otherwise unusable configuration."""


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"type": "array", "items": _VEC}


def _family_obj(families, params: dict) -> dict:
    props = {"family": {"enum": sorted(families)}}
    props.update(params)
    return {"type": "object", "required": ["family"], "properties": props,
            "additionalProperties": False}


_SCALAR = {"oneOf": [_NUM, _family_obj(F.SCALAR_FAMILIES, {
    "value": _NUM, "gradient": _VEC, "curvature": _VEC, "time": _NUM,
    "amplitude": _NUM, "axis": {"type": "integer", "minimum": 0},
    "axes": _MAT, "values": {"type": "array"},
})]}

# parameters accepted by each registered family (checked after the schema)
FAMILY_PARAMS = {
    "scalar": {"constant": {"value"}, "affine": {"value", "gradient", "time"},
               "diagonal_quadratic": {"value", "gradient", "curvature", "time"},
               "sine_squared": {"value", "amplitude", "axis"},
               "tabulated": {"axes", "values"}},
    "drift": {"constant": {"value"}, "affine": {"offset", "matrix"}},
    "diffusion": {"constant": {"matrix"}, "diagonal_quadratic": {"offset", "slope", "curvature"},
                  "diagonal_sqrt_abs": {"scale"}},
    "jump": {"linear": {"matrix"}, "saturating": {"matrix"}},
}
FAMILY_REQUIRED = {
    "scalar": {"constant": {"value"}, "tabulated": {"axes", "values"}},
    "drift": {"constant": {"value"}, "affine": {"offset", "matrix"}},
    "diffusion": {"constant": {"matrix"}, "diagonal_quadratic": {"offset"}},
    "jump": {"linear": {"matrix"}, "saturating": {"matrix"}},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["problem", "model", "lattice"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "problem": {
            "type": "object", "additionalProperties": False,
            "required": ["dim", "modes", "horizon", "payoff", "terminal", "costs"],
            "properties": {
                "dim": {"type": "integer", "minimum": 1},
                "modes": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "payoff": {"type": "array", "items": _SCALAR},
                "terminal": {"type": "array", "items": _SCALAR},
                "costs": {"type": "array", "items": {"type": "array",
                                                     "items": {"oneOf": [{"type": "null"}, _SCALAR]}}},
                "growth_bound": {"type": "number", "minimum": 1},
                "growth_exponent": {"type": "number", "minimum": 1},
            },
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "drift": _family_obj(F.DRIFT_FAMILIES, {"value": _VEC, "offset": _VEC, "matrix": _MAT}),
                "diffusion": _family_obj(F.DIFFUSION_FAMILIES, {
                    "matrix": _MAT, "offset": _VEC, "slope": _VEC, "curvature": _VEC, "scale": _NUM}),
                "jump": _family_obj(F.JUMP_FAMILIES, {"matrix": _MAT}),
                "levy": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "atoms": {"type": "array", "items": {
                            "type": "array", "minItems": 2, "maxItems": 2,
                            "prefixItems": [{"oneOf": [_NUM, _VEC]}, _NUM]}},
                        "r_min": {"type": "number", "exclusiveMinimum": 0},
                        "tempered_stable": {
                            "type": "object", "additionalProperties": False,
                            "required": ["c", "alpha", "r_min", "r_max", "nodes"],
                            "properties": {"c": _NUM, "alpha": _NUM, "beta": _NUM,
                                           "r_min": _NUM, "r_max": _NUM,
                                           "nodes": {"type": "integer", "minimum": 1},
                                           "symmetric": {"type": "boolean"}}},
                    },
                },
                "exp_tail_rate": {"type": "number", "exclusiveMinimum": 0},
                "lipschitz_bound": {"type": "number", "minimum": 0},
                "jump_bound": {"type": "number", "minimum": 0},
                "measure_bound": {"type": "number", "minimum": 0},
            },
        },
        "lattice": {
            "type": "object", "additionalProperties": False,
            "required": ["box", "nodes", "time_steps"],
            "properties": {
                "box": {"type": "array", "items": {"type": "array", "items": _NUM,
                                                   "minItems": 2, "maxItems": 2}},
                "nodes": {"type": "array", "items": {"type": "integer", "minimum": 3}},
                "time_steps": {"type": "integer", "minimum": 1},
            },
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "boundary": {"enum": ["clamp", "extrapolate"]},
                "extrapolation_degree": {"type": "integer", "minimum": 0},
                "coupling": {"enum": ["exact", "split"]},
                "max_policy_iterations": {"type": "integer", "minimum": 1},
            },
        },
        "validation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "box": {"type": "array", "items": {"type": "array", "items": _NUM,
                                                   "minItems": 2, "maxItems": 2}},
                "samples": {"type": "integer", "minimum": 2},
                "times": {"type": "integer", "minimum": 1},
                "max_cycle": {"type": "integer", "minimum": 2},
                "no_loop_margin": {"type": "number", "minimum": 0},
                "growth_ratio_limit": {"type": "number", "exclusiveMinimum": 1},
            },
        },
        "barriers": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "anchors": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["mode", "point"],
                    "properties": {"mode": {"type": "integer", "minimum": 0}, "point": _VEC}}},
                "epsilon": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "tol": {"type": "number", "minimum": 0},
                "max_doublings": {"type": "integer", "minimum": 0},
                "perturbation": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"theta": {"type": "number", "minimum": 0},
                                   "gamma": {"type": "number", "minimum": 0.5},
                                   "lambda": {"type": "number", "minimum": 0}}},
            },
        },
        "mc": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "antithetic": {"type": "boolean"},
                "chunk": {"type": "integer", "minimum": 1},
                "points": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["x", "mode"],
                    "properties": {"x": _VEC, "mode": {"type": "integer", "minimum": 0}}}},
                "richardson": {"type": "boolean"},
                "pde_budget": {"oneOf": [{"const": "self_convergence"}, {"type": "number", "minimum": 0}]},
                "field": {"type": "string"},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


@dataclass
class RunConfig:
    raw: dict
    problem: SwitchingProblem
    model: LevyModel
    lattice: Lattice
    solver: SolverConfig
    nonlocal_cfg: NonlocalConfig
    sample_spec: SampleSpec
    validation: dict
    barriers: dict
    mc: SimConfig
    mc_options: dict
    out_dir: Path

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _check_family(kind: str, spec: dict, where: str):
    fam = spec["family"]
    allowed = FAMILY_PARAMS[kind].get(fam, set())
    extra = set(spec) - allowed - {"family"}
    if extra:
        raise ConfigError(f"{where}: parameters {sorted(extra)} not accepted by {kind} family {fam!r}")
    missing = FAMILY_REQUIRED[kind].get(fam, set()) - set(spec)
    if missing:
        raise ConfigError(f"{where}: {kind} family {fam!r} needs {sorted(missing)}")


def _scalar(spec, where: str) -> F.ScalarField:
    if isinstance(spec, (int, float)):
        return F.Constant(float(spec))
    _check_family("scalar", spec, where)
    return F.build(F.SCALAR_FAMILIES, spec, "scalar")


def _vector_family(kind: str, registry, spec, where):
    _check_family(kind, spec, where)
    return F.build(registry, spec, kind)


def build_problem(block: dict) -> SwitchingProblem:
    d = block["modes"]
    if len(block["payoff"]) != d or len(block["terminal"]) != d:
        raise ConfigError("problem: payoff and terminal need one entry per mode")
    costs = block["costs"]
    if len(costs) != d or any(len(r) != d for r in costs):
        raise ConfigError("problem: costs must be a modes x modes table")
    table = []
    for i, row in enumerate(costs):
        out = []
        for j, c in enumerate(row):
            if i == j:
                if c not in (None, 0, 0.0):
                    raise ConfigError(f"problem.costs[{i}][{i}] must be null or 0")
                out.append(None)
            elif c is None:
                raise ConfigError(f"problem.costs[{i}][{j}] is missing")
            else:
                out.append(_scalar(c, f"problem.costs[{i}][{j}]"))
        table.append(tuple(out))
    return SwitchingProblem(
        d,
        tuple(_scalar(p, f"problem.payoff[{i}]") for i, p in enumerate(block["payoff"])),
        tuple(table),
        tuple(_scalar(g, f"problem.terminal[{i}]") for i, g in enumerate(block["terminal"])),
        float(block["horizon"]),
        float(block.get("growth_bound", 10.0)),
        float(block.get("growth_exponent", 1.0)),
    )


def build_measure(block: dict | None) -> LevyMeasure:
    if not block:
        return LevyMeasure.empty()
    r_min = float(block.get("r_min", 1e-8))
    meas = LevyMeasure.atoms([(z, w) for z, w in block.get("atoms", [])], r_min)
    if "tempered_stable" in block:
        ts = block["tempered_stable"]
        gl = gauss_legendre_measure(tempered_stable_density(ts["c"], ts["alpha"], ts.get("beta", 0.0)),
                                    ts["r_min"], ts["r_max"], ts["nodes"], ts.get("symmetric", True))
        meas = gl if len(meas) == 0 else meas.merge(gl)
    return meas


def build_model(block: dict, dim: int) -> LevyModel:
    drift = (_vector_family("drift", F.DRIFT_FAMILIES, block["drift"], "model.drift")
             if "drift" in block else F.zero_drift(dim))
    diff = (_vector_family("diffusion", F.DIFFUSION_FAMILIES, block["diffusion"], "model.diffusion")
            if "diffusion" in block else F.zero_diffusion(dim))
    jump = (_vector_family("jump", F.JUMP_FAMILIES, block["jump"], "model.jump")
            if "jump" in block else F.ZeroJump(dim))
    meas = build_measure(block.get("levy"))
    if len(meas) and "jump" not in block:
        raise ConfigError("model.levy has atoms but no model.jump amplitude")
    return LevyModel(dim, drift, diff, jump, meas,
                     float(block.get("exp_tail_rate", 1.0)),
                     float(block.get("lipschitz_bound", 10.0)),
                     float(block.get("jump_bound", 10.0)),
                     float(block.get("measure_bound", 100.0)))


def load_raw(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return raw


def parse(raw: dict, seed: int | None = None, threads: int | None = None,
          out_dir: str | None = None) -> RunConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from exc
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw.setdefault("mc", {})["seed"] = int(seed)
    pb = raw["problem"]
    dim = pb["dim"]
    lat_b = raw["lattice"]
    if len(lat_b["box"]) != dim or len(lat_b["nodes"]) != dim:
        raise ConfigError("lattice box/nodes must have one entry per dimension")
    try:
        problem = build_problem(pb)
        model = build_model(raw["model"], dim)
        lattice = Lattice(tuple(map(tuple, lat_b["box"])), tuple(lat_b["nodes"]), lat_b["time_steps"])
        sb = raw.get("solver", {})
        boundary = Boundary(sb.get("boundary", "clamp"), sb.get("extrapolation_degree", 1))
        vb = raw.get("validation", {})
        kappa = sb.get("kappa", max(model.levy_measure.r_min, 0.1))
        solver = SolverConfig(kappa, boundary, sb.get("coupling", "exact"),
                              sb.get("max_policy_iterations", 200),
                              max_cycle=vb.get("max_cycle"),
                              no_loop_margin=vb.get("no_loop_margin", 0.0),
                              validation_samples=vb.get("samples", 9))
        nl = NonlocalConfig(kappa, boundary)
        vbox = tuple(map(tuple, vb.get("box", lat_b["box"])))
        sample_spec = SampleSpec.for_problem(vbox, problem, vb.get("samples", 9), vb.get("times", 3))
        mb = raw.get("mc", {})
        mc = SimConfig(mb.get("paths", 10_000), mb.get("dt", problem.horizon / lattice.time_steps),
                       mb.get("seed", 0), mb.get("antithetic", False), mb.get("chunk", 4096),
                       threads or 1)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"config rejected: {exc}") from exc
    out = Path(out_dir or raw.get("output", {}).get("dir", "switchgrid_out"))
    return RunConfig(raw, problem, model, lattice, solver, nl, sample_spec, vb,
                     raw.get("barriers", {}), mc, raw.get("mc", {}), out)


def load(path, **kw) -> RunConfig:
    return parse(load_raw(path), **kw)


def perturbation_spec(block: dict, lam: float) -> PerturbationSpec:
    p = block.get("perturbation", {})
    return PerturbationSpec(p.get("theta", 0.1), p.get("lambda", lam), p.get("gamma", 1.0))


def mc_points(cfg: RunConfig):
    pts = cfg.mc_options.get("points")
    if pts:
        return [(np.asarray(p["x"], float), int(p["mode"])) for p in pts]
    centre = np.mean(np.asarray(cfg.lattice.box), axis=1)
    return [(centre, 0)]
