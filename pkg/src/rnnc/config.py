"""Run configuration: YAML file, JSON-schema validation, defaults."""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema
import yaml

from .errors import ValidationError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_pair = {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}
_count = {"type": "integer", "minimum": 1}
_normal = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"mean": _num, "var": _pos},
}
_normal_or_list = {"oneOf": [_normal, {"type": "array", "items": _normal, "minItems": 1}]}
_ig = {"type": "object", "additionalProperties": False, "properties": {"a": _pos, "b": _pos}}


def _block(props):
    return {"type": "object", "additionalProperties": False, "properties": props}


SCHEMA = _block(
    {
        "seed": {"type": "integer", "minimum": 0},
        "threads": _count,
        "output": {"type": "string"},
        "model": _block(
            {
                "levels": _count,
                "m": {"type": "integer", "minimum": 0},
                "trend": {"enum": ["constant", "linear"]},
                "scale": {"enum": ["constant", "linear"]},
                "ordering": {"enum": ["coord-sort", "max-min"]},
                "anisotropic": {"type": "boolean"},
                "project": {"type": "boolean"},
            }
        ),
        "priors": _block(
            {"beta": _normal_or_list, "gamma": _normal_or_list, "sigma2": _ig, "tau2": _ig, "kappa_max": _pos}
        ),
        "grid": _block(
            {"decay": _pair, "n_decay": _count, "tau2_rel": _pair, "n_tau": _count, "folds": {"type": "integer", "minimum": 2}}
        ),
        "mcmc": _block(
            {
                "iterations": _count,
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": _count,
                "scales": {"type": "array", "items": _pos, "minItems": 3, "maxItems": 3},
                "adapt": {"type": "boolean"},
                "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "init_decay": _pos,
            }
        ),
        "simulate": _block(
            {
                "preset": {"enum": ["two-level", "four-level"]},
                "n": _count,
                "design": {"enum": ["nested-grid", "non-nested-uniform"]},
            }
        ),
    }
)

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "output": "out",
    "model": {
        "levels": 2,
        "m": 10,
        "trend": "constant",
        "scale": "constant",
        "ordering": "coord-sort",
        "anisotropic": False,
        "project": False,
    },
    "priors": {
        "beta": {"mean": 0.0, "var": 1000.0},
        "gamma": {"mean": 0.0, "var": 1000.0},
        "sigma2": {"a": 2.0, "b": 1.0},
        "tau2": {"a": 2.0, "b": 1.0},
        "kappa_max": 25.0,
    },
    "grid": {"decay": [0.1, 25.0], "n_decay": 20, "tau2_rel": [0.0005, 0.4], "n_tau": 10, "folds": 5},
    "mcmc": {
        "iterations": 10000,
        "burn_in": 3000,
        "thin": 1,
        "scales": [0.1, 0.1, 0.1],
        "adapt": True,
        "target_accept": 0.3,
        "init_decay": 5.0,
    },
    "simulate": {"preset": "two-level", "n": 2000, "design": "non-nested-uniform"},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(raw) -> dict:
    """Validate a raw mapping and fill in defaults. Unknown keys are rejected."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError("configuration must be a mapping")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if cfg["mcmc"]["burn_in"] >= cfg["mcmc"]["iterations"]:
        raise ValidationError("config mcmc: burn_in must be smaller than iterations")
    return cfg


def load(path=None) -> dict:
    if path is None:
        return validate({})
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path} is not valid YAML: {exc}") from None
    return validate(raw)


def config_hash(cfg) -> str:
    """Short digest of everything that can change numeric results.

    The worker count is excluded since results do not depend on it.
    """
    payload = {k: v for k, v in cfg.items() if k not in ("threads", "output")}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
