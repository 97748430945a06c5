"""Run configuration: a small TOML-like grammar, schema validation and round-trip dumping.

Grammar (one item per line)::

    # comment               (also allowed after a value)
    [section]
    key = value

Values are integers, floats (``1e-3``, ``0.25``), ``true``/``false``,
double-quoted strings and JSON-style arrays of numbers (``[8, 16, 32]``).
Sections: ``model``, ``initial``, ``grid``, ``solver``, ``galerkin``,
``output``. Every error is reported with its line number; parsing continues
after an error so all problems are listed at once.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

from .segment_core import ParameterError, TimeGrid

MODEL_KINDS = ("linear_meanfield", "porous_medium", "zero")


class ConfigError(ValueError):
    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {ln}: {msg}" if ln else msg for ln, msg in errors))


@dataclass(frozen=True)
class _Key:
    kind: type | str          # int, float, bool, str, "int_list", "matrix"
    default: object = None
    required: bool = False
    check: object = None      # predicate on the value
    rule: str = ""            # human-readable range


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _at_least(v):
    return lambda x: x >= v


SCHEMA: dict[str, dict[str, _Key]] = {
    "model": {
        "kind": _Key(str, required=True, check=lambda s: s in MODEL_KINDS, rule=f"one of {', '.join(MODEL_KINDS)}"),
        "a_self": _Key(float, 0.0),
        "b_delay": _Key(float, 0.0),
        "c_mean": _Key(float, 0.0),
        "e_mean_delay": _Key(float, 0.0),
        "sigma": _Key("matrix", 1.0),
        "dim": _Key(int, 1, check=_at_least(1), rule=">= 1"),
    },
    "initial": {
        "value": _Key(float, 1.0),
        "slope": _Key(float, 0.0),
    },
    "grid": {
        "m": _Key(int, required=True, check=_at_least(1), rule=">= 1"),
        "dt": _Key(float, required=True, check=_positive, rule="> 0"),
        "T": _Key(float, required=True, check=_positive, rule="> 0"),
    },
    "solver": {
        "N": _Key(int, 1000, check=_at_least(1), rule=">= 1"),
        "max_iters": _Key(int, 12, check=_at_least(1), rule=">= 1"),
        "tol": _Key(float, 1e-3, check=_positive, rule="> 0"),
        "seed": _Key(int, 0, check=lambda s: 0 <= s < 2**64, rule="in [0, 2^64)"),
        "macro_stride": _Key(int, 1, check=_at_least(1), rule=">= 1"),
        "metric_stride": _Key(int, 0, check=_nonneg, rule=">= 0 (0 = automatic)"),
        "w2_cap": _Key(int, 512, check=_at_least(1), rule=">= 1"),
        "probe_trials": _Key(int, 100, check=_at_least(1), rule=">= 1"),
        "probe_seeds": _Key(int, 10, check=_at_least(1), rule=">= 1"),
    },
    "galerkin": {
        "n_modes": _Key(int, 16, check=_at_least(1), rule=">= 1"),
        "L": _Key(float, math.pi, check=_positive, rule="> 0"),
        "p": _Key(float, 2.0, check=_at_least(2), rule=">= 2"),
        "n_x": _Key(int, 0, check=_nonneg, rule=">= 0 (0 = 8 * n_modes)"),
        "replicas": _Key(int, 1000, check=_at_least(1), rule=">= 1"),
        "modes_sweep": _Key("int_list", ()),
        "force": _Key(bool, False),
    },
    "output": {
        "directory": _Key(str, "out"),
        "snapshots": _Key(bool, False),
        "save_paths": _Key(bool, True),
    },
}


@dataclass(frozen=True)
class ModelSection:
    kind: str
    a_self: float = 0.0
    b_delay: float = 0.0
    c_mean: float = 0.0
    e_mean_delay: float = 0.0
    sigma: object = 1.0
    dim: int = 1


@dataclass(frozen=True)
class InitialSection:
    value: float = 1.0
    slope: float = 0.0


@dataclass(frozen=True)
class GridSection:
    m: int
    dt: float
    T: float


@dataclass(frozen=True)
class SolverSection:
    N: int = 1000
    max_iters: int = 12
    tol: float = 1e-3
    seed: int = 0
    macro_stride: int = 1
    metric_stride: int = 0
    w2_cap: int = 512
    probe_trials: int = 100
    probe_seeds: int = 10


@dataclass(frozen=True)
class GalerkinSection:
    n_modes: int = 16
    L: float = math.pi
    p: float = 2.0
    n_x: int = 0
    replicas: int = 1000
    modes_sweep: tuple = ()
    force: bool = False


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    snapshots: bool = False
    save_paths: bool = True


_SECTION_TYPES = {
    "model": ModelSection,
    "initial": InitialSection,
    "grid": GridSection,
    "solver": SolverSection,
    "galerkin": GalerkinSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection
    grid: GridSection
    initial: InitialSection = field(default_factory=InitialSection)
    solver: SolverSection = field(default_factory=SolverSection)
    galerkin: GalerkinSection = field(default_factory=GalerkinSection)
    output: OutputSection = field(default_factory=OutputSection)

    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_horizon(self.grid.m, self.grid.dt, self.grid.T)

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


# --- lexing --------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _scalar(text: str):
    if text in ("true", "false"):
        return text == "true"
    if _INT_RE.match(text):
        return int(text)
    if _FLOAT_RE.match(text):
        return float(text)
    if len(text) >= 2 and text[0] == text[-1] == '"':
        return json.loads(text)
    raise ValueError(f"cannot read value {text!r}")


def _value(text: str):
    text = text.strip()
    if text.startswith("["):
        data = json.loads(text)
        if not isinstance(data, list):
            raise ValueError("expected an array")
        return data
    return _scalar(text)


def _coerce(key: _Key, raw):
    """Convert a raw value to the key's type or raise TypeError."""
    kind = key.kind
    if kind is bool:
        if isinstance(raw, bool):
            return raw
    elif kind is int:
        if isinstance(raw, int) and not isinstance(raw, bool):
            return raw
    elif kind is float:
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            val = float(raw)
            if math.isfinite(val):
                return val
    elif kind is str:
        if isinstance(raw, str):
            return raw
    elif kind == "int_list":
        if isinstance(raw, list) and all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in raw):
            return tuple(raw)
    elif kind == "matrix":
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if (isinstance(raw, list) and raw and all(isinstance(r, list) and len(r) == len(raw) for r in raw)
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for r in raw for v in r)):
            return tuple(tuple(float(v) for v in r) for r in raw)
    expected = {"int_list": "array of positive integers", "matrix": "number or square array"}.get(
        kind, getattr(kind, "__name__", str(kind)))
    raise TypeError(f"expected {expected}, got {raw!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    errors: list[tuple[int, str]] = []
    values: dict[str, dict[str, object]] = {}
    section_line: dict[str, int] = {}
    key_line: dict[tuple[str, str], int] = {}
    current = None

    for ln, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        sec = _SECTION_RE.match(line)
        if sec:
            current = sec.group(1)
            if current not in SCHEMA:
                errors.append((ln, f"unknown section [{current}]"))
            elif current in values:
                errors.append((ln, f"duplicate section [{current}]"))
            else:
                values[current] = {}
                section_line[current] = ln
            continue
        kv = _KEY_RE.match(line)
        if not kv:
            errors.append((ln, f"cannot parse line: {raw_line.strip()!r}"))
            continue
        if current is None:
            errors.append((ln, "key outside of any section"))
            continue
        if current not in SCHEMA or current not in values or section_line[current] > ln:
            continue
        name, text_value = kv.group(1), kv.group(2)
        full = f"{current}.{name}"
        if name not in SCHEMA[current]:
            errors.append((ln, f"unknown key {full}"))
            continue
        if name in values[current]:
            errors.append((ln, f"duplicate key {full}"))
            continue
        try:
            raw = _value(text_value)
        except ValueError as exc:
            errors.append((ln, f"{full}: {exc}"))
            continue
        spec = SCHEMA[current][name]
        try:
            val = _coerce(spec, raw)
        except TypeError as exc:
            errors.append((ln, f"type mismatch for {full}: {exc}"))
            continue
        if spec.check is not None and not spec.check(val):
            errors.append((ln, f"range violation for {full}: must be {spec.rule}, got {raw!r}"))
            continue
        values[current][name] = val
        key_line[(current, name)] = ln

    for sec_name, keys in SCHEMA.items():
        for name, spec in keys.items():
            if spec.required and name not in values.get(sec_name, {}):
                errors.append((section_line.get(sec_name, 0), f"missing required key {sec_name}.{name}"))

    grid = values.get("grid", {})
    if {"m", "dt", "T"} <= grid.keys():
        try:
            TimeGrid.from_horizon(grid["m"], grid["dt"], grid["T"])
        except ParameterError as exc:
            errors.append((key_line[("grid", "T")], f"grid.T: {exc}"))

    model = values.get("model", {})
    sigma = model.get("sigma")
    if isinstance(sigma, tuple) and len(sigma) != model.get("dim", 1):
        errors.append((key_line[("model", "sigma")], "model.sigma must be dim x dim"))
    if model.get("kind") == "porous_medium" and model.get("dim", 1) != 1:
        errors.append((key_line.get(("model", "dim"), 0), "model.dim must be 1 for porous_medium"))

    if errors:
        raise ConfigError(sorted(errors, key=lambda e: e[0]))
    sections = {name: _SECTION_TYPES[name](**vals) for name, vals in values.items()}
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    raise TypeError(f"cannot format {value!r}")


def dump_config(cfg: RunConfig) -> str:
    """Serialize every field (defaults included) in schema order."""
    lines = []
    for sec_name in SCHEMA:
        sec = getattr(cfg, sec_name)
        lines.append(f"[{sec_name}]")
        for name in SCHEMA[sec_name]:
            lines.append(f"{name} = {_format(getattr(sec, name))}")
        lines.append("")
    return "\n".join(lines)
