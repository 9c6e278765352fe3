"""Run configuration: flat ``section.key = value`` files.

The format is a subset of TOML (dotted keys only), so any TOML parser reads
it.  Sections are ``market``, ``producer1``, ``producer2`` and ``engine``.
Unknown keys are rejected.  Every key is optional; defaults reproduce the
reference duopoly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .lsmc import BasisSpec
from .market import DEFAULT_CAP, PRODUCER1, PRODUCER2, MarketParams, ProducerParams
from .matrix_game import LAW_NAMES, parse_law

ENGINES = ("mca", "lsmc", "both")


@dataclass(frozen=True)
class EngineParams:
    engine: str = "lsmc"
    law: str = "utilitarian"
    green_weights: tuple = None
    grid_p: int = 141
    grid_x: int = 141
    bounds: float = 4.0
    n_paths: int = 40000
    outer_iters: int = 3
    seed: int = 0
    threads: int = 1
    out: str = "out"
    monomials: tuple = BasisSpec().monomials
    hinges: tuple = BasisSpec().hinges

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        try:
            parse_law(self.law, self.green_weights)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if min(self.grid_p, self.grid_x) < 3:
            raise ConfigError("lattice sizes must be at least 3")
        if self.bounds <= 0:
            raise ConfigError("bounds must be positive")
        if self.n_paths < 1 or self.outer_iters < 1 or self.threads < 1:
            raise ConfigError("n_paths, outer_iters and threads must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def basis(self):
        return BasisSpec(self.monomials, self.hinges)

    def correlation_law(self, name=None):
        return parse_law(name or self.law, self.green_weights)


@dataclass(frozen=True)
class ModelConfig:
    market: MarketParams = field(default_factory=MarketParams)
    producer1: ProducerParams = PRODUCER1
    producer2: ProducerParams = PRODUCER2
    engine: EngineParams = field(default_factory=EngineParams)
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        if not self.cap > 0:
            raise ConfigError("cap must be positive")

    def with_engine(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return dataclasses.replace(self, engine=dataclasses.replace(self.engine, **changes))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


_SECTIONS = {"market": MarketParams, "producer1": ProducerParams,
             "producer2": ProducerParams, "engine": EngineParams}
_TUPLE_KEYS = {"green_weights", "monomials", "hinges"}


def _tuplify(v):
    return tuple(_tuplify(e) for e in v) if isinstance(v, list) else v


def _build(cls, values, base):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {cls.__name__}.{key}")
        if key in _TUPLE_KEYS:
            value = _tuplify(value)
        expected = type(getattr(base, key)) if getattr(base, key) is not None else None
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if expected is not None and expected is not tuple and not isinstance(value, expected):
            raise ConfigError(f"{key} must be of type {expected.__name__}, got {value!r}")
        kwargs[key] = value
    return dataclasses.replace(base, **kwargs)


def from_dict(data):
    """Build a :class:`ModelConfig` from a nested ``{section: {key: value}}`` mapping."""
    cfg = ModelConfig()
    parts = {}
    for section, values in data.items():
        if section == "market" and "cap" in values:
            values = dict(values)
            cap = values.pop("cap")
            if not isinstance(cap, (int, float)) or isinstance(cap, bool):
                raise ConfigError("market.cap must be a number")
            parts["cap"] = float(cap)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{section} must hold key = value pairs")
        try:
            parts[section] = _build(_SECTIONS[section], values, getattr(cfg, section))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    return dataclasses.replace(cfg, **parts)


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return from_dict(data)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v) if v == v and abs(v) != float("inf") else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_value(e) for e in v) + "]"
    raise TypeError(f"cannot serialise {v!r}")


def dumps(cfg):
    """Serialise a configuration; ``loads(dumps(c)) == c``."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            lines.append(f"{section}.{f.name} = {_value(v)}")
        if section == "market":
            lines.append(f"market.cap = {_value(cfg.cap)}")
        lines.append("")
    return "\n".join(lines)


__all__ = ["ENGINES", "LAW_NAMES", "EngineParams", "ModelConfig", "dumps", "from_dict", "load", "loads"]
