"""Experiment configuration: one strict JSON document per run."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["covariance"],
    "properties": {
        "covariance": {"type": "object"},
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d", "L", "h"],
            "properties": {
                "d": {"enum": [1, 2]},
                "L": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
                "h": _POS,
            },
        },
        "bc": {"type": "array", "items": {"enum": ["dirichlet", "neumann"]}, "minItems": 1,
               "uniqueItems": True},
        "energies": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "min": _NUM, "max": _NUM,
                "num": {"type": "integer", "minimum": 2},
                "points": {"type": "array", "items": _NUM},
            },
        },
        "windows": {"type": "array",
                    "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "n_realizations": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "quadrature": {
            "type": "object", "additionalProperties": False,
            "properties": {"step": _POS, "truncation": _POS},
        },
        "certificate_grid": {
            "type": "object", "additionalProperties": False,
            "properties": {"z_step": _POS, "x_step": _POS, "truncation": _POS, "tail_eps": _POS},
        },
        "lags": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "field_file": {"type": "string"},
        "dump_fields": {"type": "integer", "minimum": 0},
        "mesh_refinement": {"type": "boolean"},
        "overrides": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "b_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "dense_limit": {"type": "integer", "minimum": 1},
                "pad": _POS,
            },
        },
    },
}

DEFAULTS = {
    "bc": ["dirichlet", "neumann"],
    "n_realizations": 100,
    "master_seed": 0,
    "output_dir": "out",
    "workers": 1,
    "lags": [],
    "dump_fields": 0,
    "mesh_refinement": False,
    "overrides": {},
}


class ConfigError(ValueError):
    """Malformed or invalid configuration (usage error)."""


@dataclass
class ExperimentConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def L_values(self) -> list:
        L = self.raw["lattice"]["L"]
        return list(L) if isinstance(L, list) else [L]

    @property
    def overrides(self) -> dict:
        return self.raw.get("overrides", {})

    def snapshot(self) -> dict:
        return copy.deepcopy(self.raw)


def validate(doc) -> ExperimentConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    merged = copy.deepcopy(DEFAULTS)
    merged.update(copy.deepcopy(doc))
    return ExperimentConfig(merged)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse, apply command-line overrides, validate."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "b_factor":
            doc.setdefault("overrides", {})["b_factor"] = value
        else:
            doc[key] = value
    return validate(doc)
