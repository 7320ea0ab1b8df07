"""Experiment configuration: JSON documents validated against a published schema."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

KINDS = ("formula-check", "occupation", "krylov", "variation", "mollifier-report", "convergence")

_num_or_expr = {"anyOf": [{"type": "number"}, {"type": "string"}]}
_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "itolocal experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "function": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"type": "string"},
                "params": {"type": "object"},
                "inline": {"type": "object"},
            },
        },
        "variant": {"enum": ["semimartingale", "curve", "ito_process"]},
        "curve_form": {"enum": ["jump", "shifted"]},
        "process": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": _num_or_expr, "b": _num_or_expr, "x0": {"type": "number"},
                "delta": _pos_num, "K": _pos_num, "N": _pos_num,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _pos_num,
                "n_steps": _pos_int,
                "da": _pos_num,
                "exponents": {"type": "array", "items": _pos_int, "minItems": 1},
            },
        },
        "n_paths": _pos_int,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "tolerances": {"type": "object", "additionalProperties": _pos_num},
        "output": {"type": "string"},
        "g": {"type": "string"},
        "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "family": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["f"],
                "additionalProperties": False,
                "properties": {"name": {"type": "string"}, "f": {"type": "string"},
                               "breakpoints": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "steps_list": {"type": "array", "items": _pos_int, "minItems": 1},
        "mollifier": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ns": {"type": "array", "items": _pos_int, "minItems": 1},
                "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                      "minItems": 2, "maxItems": 2}},
                "direction": {"type": "array", "items": {"enum": ["-", "+"]},
                              "minItems": 2, "maxItems": 2},
                "order": _pos_int,
            },
        },
    },
}

DEFAULT_TOLERANCES = {
    "formula-check": {"normalized_residual": 0.05},
    "occupation": {"relative_error": 0.02, "fraction": 0.95},
    "krylov": {"stability": 0.10},
    "variation": {"convergence": 1e-8},
    "mollifier-report": {"final_error": 1e-3},
    "convergence": {"normalized_residual": 0.1},
}

DEFAULTS: dict[str, Any] = {
    "function": {"builtin": "tanaka"},
    "variant": "semimartingale",
    "curve_form": "jump",
    "process": {"sigma": 1.0, "b": 0.0, "x0": 0.0, "delta": 1.0, "K": 1.0},
    "grid": {"horizon": 1.0, "n_steps": 2**12},
    "n_paths": 256,
    "seed": 0,
}


class ConfigError(ValueError):
    """Malformed configuration; ``str()`` carries line-level diagnostics."""


def _line_of(text: str, path: list) -> int:
    """Best-effort line of the JSON value at ``path`` (object keys searched in order)."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if not m:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def validate(doc: dict, text: str | None = None) -> None:
    """Raise :class:`ConfigError` listing every schema violation with its line."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    msgs = []
    for e in errors:
        path = list(e.absolute_path)
        if e.validator == "additionalProperties" and isinstance(e.instance, dict):
            allowed = set(e.schema.get("properties", {}))
            extra = sorted(k for k in e.instance if k not in allowed)
            path = path + extra[:1]
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        where = f"line {_line_of(text, path)}: " if text else ""
        msgs.append(f"{where}{loc}: {e.message}")
    raise ConfigError("invalid config:\n  " + "\n  ".join(msgs))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "function":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    kind: str
    function: dict = field(default_factory=lambda: dict(DEFAULTS["function"]))
    variant: str = "semimartingale"
    curve_form: str = "jump"
    process: dict = field(default_factory=lambda: dict(DEFAULTS["process"]))
    grid: dict = field(default_factory=lambda: dict(DEFAULTS["grid"]))
    n_paths: int = 256
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    g: str = "x**2"
    box: list | None = None
    family: list | None = None
    steps_list: list | None = None
    mollifier: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, text: str | None = None) -> "ExperimentConfig":
        validate(doc, text)
        full = _merge(DEFAULTS, doc)
        full["tolerances"] = {**DEFAULT_TOLERANCES[full["kind"]], **doc.get("tolerances", {})}
        return cls(**full)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: line 1: top level must be an object")
        return cls.from_dict(doc, text)

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    @property
    def n_steps(self) -> int:
        return int(self.grid["n_steps"])

    @property
    def horizon(self) -> float:
        return float(self.grid.get("horizon", 1.0))
