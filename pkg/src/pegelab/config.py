"""JSON experiment configuration: schema, defaults and object builders."""
from __future__ import annotations

import copy
import hashlib
import json

import jsonschema
import numpy as np

from .estimator import TruncationSpec
from .model import AffineField, EntropyCost, ParamBox, ParamTheta, QuadraticCost, QuadraticTerminal
from .pege import PegeConfig, PegeSchedule
from .policies import ExplorationSpec
from .sde import TimeGrid

EXPERIMENTS = ("pege-run", "regret-scan", "gap-scan", "concentration", "incomplete-demo",
               "orlicz", "riccati-check", "hjb-check")

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_schedule = _obj({"kind": {"enum": ["power", "doubling"]},
                  "r": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}, ["kind"])

SCHEMA = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "description": {"type": "string"},
    "model": _obj({"A": _matrix, "B": _matrix}, ["A", "B"]),
    "cost": {"oneOf": [
        _obj({"kind": {"const": "quadratic"}, "Q": _matrix, "R": _matrix, "G": _matrix},
             ["kind", "Q", "R", "G"]),
        _obj({"kind": {"const": "entropy"},
              "fbar0": _obj({"c": _vector, "W": _matrix}, ["c"]),
              "g": _obj({"G": _matrix, "b": _vector}, ["G"])},
             ["kind", "fbar0", "g"]),
    ]},
    "grid": _obj({"T": {"type": "number", "minimum": 0},
                  "n_steps": {"type": "integer", "minimum": 1}}, ["T"]),
    "x0": _vector,
    "box": _obj({"lower": _matrix, "upper": _matrix}, ["lower", "upper"]),
    "prior": _obj({"theta0": _matrix, "V0": _matrix}),
    "truncation": _obj({"eta": {"type": "number", "exclusiveMinimum": 0},
                        "mode": {"enum": ["clamp", "fallback"]},
                        "fallback": _matrix}),
    "exploration": _obj({"actions": _matrix, "partition": _vector}, ["actions"]),
    "schedule": _schedule,
    "n_episodes": {"type": "integer", "minimum": 1},
    "optional_update": {"type": "boolean"},
    "greedy_only": {"type": "boolean"},
    "hjb": _obj({"L": {"type": "number", "exclusiveMinimum": 0},
                 "n_x": {"type": "integer", "minimum": 51}}),
    "seeds": {"oneOf": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        _obj({"base": {"type": "integer", "minimum": 0},
              "count": {"type": "integer", "minimum": 1}}, ["count"]),
    ]},
    "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "n_eval": {"type": "integer", "minimum": 2},
    "n_vstar": {"type": "integer", "minimum": 2},
    "regret": _obj({"N_grid": {"type": "array", "items": {"type": "integer", "minimum": 1},
                               "minItems": 1},
                    "schedules": {"type": "array", "items": _schedule, "minItems": 1}},
                   ["N_grid"]),
    "gap": _obj({"center": _matrix,
                 "radii": {"type": "array", "items": {"type": "number", "minimum": 0},
                           "minItems": 1},
                 "n_directions": {"type": "integer", "minimum": 1},
                 "n_mc": {"type": "integer", "minimum": 2},
                 "expected_exponent": {"type": "number"}}, ["radii"]),
    "concentration": _obj({"m_grid": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                      "minItems": 2},
                           "n_mc_info": {"type": "integer", "minimum": 2},
                           "quantile": {"type": "number", "exclusiveMinimum": 0,
                                        "exclusiveMaximum": 1}}, ["m_grid"]),
    "incomplete": _obj({"prior_b": {"type": "number"}}),
    "orlicz": _obj({"n_samples": {"type": "integer", "minimum": 100},
                    "scale": {"type": "number"},
                    "constant": {"type": "number"},
                    "eps_grid": _vector,
                    "bernstein_N": {"type": "integer", "minimum": 1},
                    "bernstein_seeds": {"type": "integer", "minimum": 1}}),
    "riccati_check": _obj({"n_steps": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                       "minItems": 2}}),
    "hjb_check": _obj({"n_x": {"type": "array", "items": {"type": "integer", "minimum": 51},
                               "minItems": 2},
                       "residual_model": _obj({"A": _matrix, "B": _matrix}, ["A", "B"])}),
}, ["experiment"])

_MODEL_EXPERIMENTS = ("pege-run", "regret-scan", "gap-scan", "concentration", "incomplete-demo")


class ConfigError(ValueError):
    pass


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    if cfg["experiment"] in _MODEL_EXPERIMENTS:
        for key in ("model", "cost"):
            if key not in cfg:
                raise ConfigError(f"experiment {cfg['experiment']!r} needs a {key!r} block")


def resolve(cfg: dict, n_seeds: int | None = None) -> dict:
    """Validate and fill defaults; the result is what gets hashed and echoed."""
    validate(cfg)
    out = copy.deepcopy(cfg)
    out.setdefault("delta", 0.05)
    out.setdefault("n_eval", 2000)
    out.setdefault("n_vstar", 20000)
    seeds = out.get("seeds", {"base": 0, "count": 50})
    if isinstance(seeds, dict):
        seeds = {"base": seeds.get("base", 0), "count": seeds["count"]}
        if n_seeds is not None:
            seeds["count"] = int(n_seeds)
    elif n_seeds is not None:
        seeds = seeds[:n_seeds] if n_seeds <= len(seeds) else {"base": 0, "count": int(n_seeds)}
    out["seeds"] = seeds
    if "model" in out:
        th = model_theta(out)
        out.setdefault("x0", [0.0] * th.d)
        out.setdefault("grid", {"T": 1.0})
        out["grid"].setdefault("n_steps", 1000)
        q = th.d + th.p
        out.setdefault("prior", {})
        out["prior"].setdefault("theta0", np.zeros((th.d, q)).tolist())
        out["prior"].setdefault("V0", np.eye(q).tolist())
        out.setdefault("truncation", {})
        out["truncation"].setdefault("eta", 0.5)
        out["truncation"].setdefault("mode", "clamp")
        out.setdefault("optional_update", False)
        out.setdefault("greedy_only", False)
        out.setdefault("schedule", {"kind": "power", "r": 1.0})
        if out["schedule"]["kind"] == "power":
            out["schedule"].setdefault("r", 1.0)
        out.setdefault("hjb", {})
        out["hjb"].setdefault("L", 4.0)
        out["hjb"].setdefault("n_x", 201)
        if "exploration" in out:
            ex = out["exploration"]
            p = len(ex["actions"])
            ex.setdefault("partition", np.linspace(0, out["grid"]["T"], p + 1).tolist())
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# builders


def seed_list(cfg: dict) -> list:
    s = cfg["seeds"]
    if isinstance(s, dict):
        return list(range(s["base"], s["base"] + s["count"]))
    return list(s)


def model_theta(cfg: dict) -> ParamTheta:
    return ParamTheta(np.array(cfg["model"]["A"], float), np.array(cfg["model"]["B"], float))


def build_cost(block: dict, d: int):
    if block["kind"] == "quadratic":
        return QuadraticCost(np.array(block["Q"], float), np.array(block["R"], float),
                             np.array(block["G"], float))
    f = block["fbar0"]
    c = np.array(f["c"], float)
    W = np.array(f["W"], float) if "W" in f else np.zeros((len(c), d))
    g = block["g"]
    return EntropyCost(AffineField(c, W), QuadraticTerminal(np.array(g["G"], float),
                                                            np.array(g["b"], float)
                                                            if "b" in g else None))


def build_grid(cfg: dict) -> TimeGrid:
    return TimeGrid(float(cfg["grid"]["T"]), int(cfg["grid"]["n_steps"]))


def build_box(cfg: dict) -> ParamBox | None:
    if "box" not in cfg:
        return None
    return ParamBox(np.array(cfg["box"]["lower"], float), np.array(cfg["box"]["upper"], float))


def build_truncation(cfg: dict) -> TruncationSpec:
    t = cfg["truncation"]
    box = build_box(cfg)
    if box is None:
        raise ConfigError("truncation needs a 'box' block")
    fb = np.array(t["fallback"], float) if "fallback" in t else None
    return TruncationSpec.around(box, t["eta"], t["mode"], fb)


def build_exploration(cfg: dict) -> ExplorationSpec:
    ex = cfg["exploration"]
    return ExplorationSpec(np.array(ex["actions"], float), np.array(ex["partition"], float))


def build_schedule(block: dict) -> PegeSchedule:
    return PegeSchedule(block["kind"], block.get("r", 1.0))


def build_pege(cfg: dict, **overrides) -> PegeConfig:
    th = model_theta(cfg)
    kw = dict(
        theta=th,
        cost=build_cost(cfg["cost"], th.d),
        grid=build_grid(cfg),
        theta0_hat=np.array(cfg["prior"]["theta0"], float),
        V0=np.array(cfg["prior"]["V0"], float),
        truncation=build_truncation(cfg),
        exploration=build_exploration(cfg),
        schedule=build_schedule(cfg["schedule"]),
        n_episodes=int(cfg.get("n_episodes", 1)),
        optional_update=cfg["optional_update"],
        seed=seed_list(cfg)[0],
        x0=np.array(cfg["x0"], float),
        box=build_box(cfg),
        greedy_only=cfg["greedy_only"],
        hjb_domain=(float(cfg["hjb"]["L"]), int(cfg["hjb"]["n_x"])),
    )
    kw.update(overrides)
    return PegeConfig(**kw)
