"""Experiment configuration: parsing, defaults and validation.

A config is a JSON object::

    {"algorithm": "mobile", "steps": 3000, "replicates": 20, "master_seed": 1,
     "scene": {"kind": "uniform", "n_agents": 5, "n_anchors": 1, "side": 20,
               "comm_radius": 2, "dim": 2},
     "params": {"beta": 0.01, "epsilon": null, ...}}

Missing parameters take their defaults, so ``to_dict`` always returns the
complete, normalised document and ``from_dict(to_dict(c)) == c``.
"""

import copy
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

from .. import mobile, robust, scene
from ..errors import ConfigError, InvalidInput, LocalizationError

ALGORITHMS = ("diloc", "dlre", "diland", "mobile", "kf", "pf")
PRESETS = ("fig3_left", "fig3_right", "fig4", "fig5")
REQUIRED = object()  # schema default marking a field without a default


# -- field checks ------------------------------------------------------------------


def _num(path, v, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(path, f"expected a finite number, got {v!r}")
    if v < lo or (lo_open and v == lo) or v > hi or (hi_open and v == hi):
        a, b = "(" if lo_open else "[", ")" if hi_open else "]"
        raise ConfigError(path, f"{v!r} outside {a}{lo}, {hi}{b}")
    return float(v)


def _int(path, v, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(path, f"expected an integer, got {v!r}")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(path, f"{v} outside [{lo}, {hi}]")
    return v


def _choice(path, v, options):
    if v not in options:
        raise ConfigError(path, f"{v!r} not one of {list(options)}")
    return v


def _bool(path, v):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def _optional(check):
    def inner(path, v):
        return None if v is None else check(path, v)
    return inner


def _box(path, v):
    if v is None:
        return None
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(path, "expected [lo, hi]")
    lo, hi = _num(path + "[0]", v[0]), _num(path + "[1]", v[1])
    if not lo < hi:
        raise ConfigError(path, "need lo < hi")
    return [lo, hi]


_POLICIES = tuple(p.value for p in scene.SelectionPolicy)
_pos = dict(lo=0.0, lo_open=True)
_nonneg = dict(lo=0.0)
_unit_open = dict(lo=0.0, hi=1.0, lo_open=True, hi_open=True)

_SEARCH = {
    "policy": ("max_min_weight", lambda p, v: _choice(p, v, _POLICIES)),
    "max_subsets": (200, lambda p, v: _int(p, v, 1)),
    "init_box": (None, _box),
}


def _schedule(path, v):
    if not isinstance(v, dict):
        raise ConfigError(path, "expected {kind, params}")
    try:
        return robust.StepSchedule.from_dict(v).to_dict()
    except (LocalizationError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(path, str(exc)) from None


_NOISE_FIELDS = {
    "link_q": (1.0, lambda p, v: _num(p, v, 0.0, 1.0, lo_open=True)),
    "comm_sigma": (0.0, lambda p, v: _num(p, v, **_nonneg)),
    "range_bias": (0.0, lambda p, v: _num(p, v)),
    "range_sigma": (0.0, lambda p, v: _num(p, v, **_nonneg)),
    "kind": ("gaussian", lambda p, v: _choice(p, v, ("gaussian", "uniform", "laplace"))),
}


def _noise(path, v):
    return _fill(path, v, _NOISE_FIELDS)


_ROBUST = {
    **_SEARCH,
    "schedule": ({"kind": "harmonic", "params": {"a": 1.0, "k0": 1.0}}, _schedule),
    "noise": ({}, _noise),
    "weights": ("fresh", lambda p, v: _choice(p, v, ("fresh", "frozen"))),
    # relative inclusion tolerance for choosing sets from noisy ranges
    "epsilon": (0.2, lambda p, v: _num(p, v, **_pos)),
}

_FILTER = {
    "init_box": (None, _box),
    "d_max": (5.0, lambda p, v: _num(p, v, **_pos)),
    "anchors_move": (True, _bool),
    "process_sigma": (None, _optional(lambda p, v: _num(p, v, **_pos))),
    "range_sigma": (0.5, lambda p, v: _num(p, v, **_pos)),
}

PARAMS = {
    "diloc": dict(_SEARCH),
    "dlre": _ROBUST,
    "diland": _ROBUST,
    "mobile": {
        **_SEARCH,
        "beta": (0.01, lambda p, v: _num(p, v, **_unit_open)),
        "alpha_anchor": (0.01, lambda p, v: _num(p, v, **_unit_open)),
        "alpha_k": (None, _optional(lambda p, v: _num(p, v, **_unit_open))),
        "epsilon": (None, _optional(lambda p, v: _num(p, v, **_pos))),
        "K_d": (0.0, lambda p, v: _num(p, v, **_nonneg)),
        "K_theta": (0.0, lambda p, v: _num(p, v, **_nonneg)),
        "K_r": (0.0, lambda p, v: _num(p, v, **_nonneg)),
        "noise_basis": ("cumulative", lambda p, v: _choice(p, v, ("cumulative", "step"))),
        "d_max": (5.0, lambda p, v: _num(p, v, **_pos)),
        "anchors_move": (True, _bool),
        "update_mode": ("jacobi", lambda p, v: _choice(p, v, ("jacobi", "sequential"))),
    },
    "kf": _FILTER,
    "pf": {
        **_FILTER,
        "n_particles": (1000, lambda p, v: _int(p, v, 1)),
        "resample_threshold": (0.5, lambda p, v: _num(p, v, 0.0, 1.0)),
        "roughening": (0.0, lambda p, v: _num(p, v, **_nonneg)),
    },
}

_SCENES = {
    "uniform": {
        "n_agents": (REQUIRED, lambda p, v: _int(p, v, 1)),
        "n_anchors": (REQUIRED, lambda p, v: _int(p, v, 0)),
        "side": (REQUIRED, lambda p, v: _num(p, v, **_pos)),
        "comm_radius": (REQUIRED, lambda p, v: _num(p, v, **_pos)),
        "dim": (2, lambda p, v: _int(p, v, 1, 8)),
    },
    "simplex": {
        "n_agents": (REQUIRED, lambda p, v: _int(p, v, 1)),
        "side": (REQUIRED, lambda p, v: _num(p, v, **_pos)),
        "comm_radius": (REQUIRED, lambda p, v: _num(p, v, **_pos)),
        "dim": (2, lambda p, v: _int(p, v, 1, 8)),
        "margin": (0.05, lambda p, v: _num(p, v, 0.0, 0.5, hi_open=True)),
    },
    "file": {"path": (REQUIRED, lambda p, v: v if isinstance(v, str) else _raise(p, "expected a path"))},
    "inline": {"deployment": (REQUIRED, lambda p, v: _deployment(p, v).to_dict())},
}


def _raise(path, detail):
    raise ConfigError(path, detail)


def _deployment(path, doc):
    try:
        return scene.Deployment.from_dict(doc)
    except (LocalizationError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, f"invalid deployment: {exc}") from None


def _fill(path, doc, schema):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    out = {}
    for name, (default, check) in schema.items():
        sub = f"{path}.{name}"
        if name in doc:
            out[name] = check(sub, doc[name])
        elif default is REQUIRED:
            raise ConfigError(sub, "missing required field")
        else:
            out[name] = None if default is None else check(sub, copy.deepcopy(default))
    return out


@dataclass
class ExperimentConfig:
    algorithm: str
    scene: dict
    params: dict = field(default_factory=dict)
    steps: int = 100
    replicates: int = 1
    master_seed: int = 0
    name: str = ""

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        """Validate and normalise a config document.

        A ``summary.json`` written by a run is accepted too; its ``config``
        entry is parsed.
        """
        if not isinstance(doc, dict):
            raise ConfigError("", "config must be a JSON object")
        if "config" in doc and "algorithm" not in doc:
            doc = doc["config"]
            if not isinstance(doc, dict):
                raise ConfigError("config", "expected an object")
        known = {"algorithm", "scene", "params", "steps", "replicates", "master_seed", "name"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        if "algorithm" not in doc:
            raise ConfigError("algorithm", "missing required field")
        algorithm = _choice("algorithm", doc["algorithm"], ALGORITHMS)
        sc = doc.get("scene")
        if not isinstance(sc, dict):
            raise ConfigError("scene", "expected an object with a 'kind'")
        kind = _choice("scene.kind", sc.get("kind"), tuple(_SCENES))
        rest = {k: v for k, v in sc.items() if k != "kind"}
        sc = {"kind": kind, **_fill("scene", rest, _SCENES[kind])}
        if kind == "file" and base_dir is not None and not os.path.isabs(sc["path"]):
            sc["path"] = os.path.normpath(os.path.join(base_dir, sc["path"]))
        params = _fill("params", doc.get("params"), PARAMS[algorithm])
        cfg = cls(
            algorithm=algorithm,
            scene=sc,
            params=params,
            steps=_int("steps", doc.get("steps", 100), 1),
            replicates=_int("replicates", doc.get("replicates", 1), 1),
            master_seed=_int("master_seed", doc.get("master_seed", 0), 0),
            name=doc.get("name", "") if isinstance(doc.get("name", ""), str)
            else _raise("name", "expected a string"),
        )
        cfg._check_combinations()
        return cfg

    def _check_combinations(self):
        p = self.params
        if self.algorithm == "mobile":
            try:
                self.mobile_params()
            except InvalidInput as exc:
                raise ConfigError("params.alpha_k", str(exc)) from None
        if self.algorithm in ("dlre", "diland"):
            try:
                robust.validate_schedule(
                    robust.StepSchedule.from_dict(p["schedule"]), robust.Algo(self.algorithm)
                )
            except LocalizationError as exc:
                raise ConfigError("params.schedule", str(exc)) from None

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "scene": copy.deepcopy(self.scene),
            "params": copy.deepcopy(self.params),
            "steps": self.steps,
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "name": self.name,
        }

    def replace(self, **changes):
        doc = self.to_dict()
        doc.update(changes)
        return ExperimentConfig.from_dict(doc)

    # -- typed views ---------------------------------------------------------------

    def mobile_params(self):
        p = self.params
        return mobile.MobileParams(
            beta=p["beta"],
            alpha_anchor=p["alpha_anchor"],
            alpha_k=p["alpha_k"],
            epsilon=p["epsilon"],
            policy=scene.SelectionPolicy(p["policy"]),
            max_subsets=p["max_subsets"],
            update_mode=p["update_mode"],
        )

    def motion_noise(self):
        p = self.params
        return mobile.MotionNoise(p["K_d"], p["K_theta"], p["K_r"], p["noise_basis"])

    def robust_noise(self):
        return robust.RobustNoise(**self.params["noise"])

    def schedule(self):
        return robust.StepSchedule.from_dict(self.params["schedule"])


def set_path(doc, dotted, value):
    """Return a copy of ``doc`` with the dotted ``path`` set to ``value``."""
    doc = copy.deepcopy(doc)
    keys = dotted.split(".")
    cur = doc
    for i, k in enumerate(keys[:-1]):
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(keys[: i + 1]), "not an object")
        cur = nxt
    cur[keys[-1]] = value
    return doc


def preset_doc(name):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {list(PRESETS)}")
    text = resources.files("linloc.harness").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def load_config(source):
    """Parse a config file, or ``preset:NAME`` for a shipped preset."""
    if source.startswith("preset:"):
        return ExperimentConfig.from_dict(preset_doc(source[len("preset:"):]))
    try:
        with open(source) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {source}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {source}: {exc}") from None
    except OSError as exc:
        raise ConfigError("", f"cannot read {source}: {exc}") from None
    return ExperimentConfig.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(source)))
