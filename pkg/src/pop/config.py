"""Flat ``key = value`` configuration files with includes.

    # comments start with '#'
    include = base.cfg        # relative to the including file; later keys win
    batch_functions = 64
    reward = global_imp_clipped

Values are coerced to the type of the matching dataclass field.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def parse_file(path: str | Path, _seen: tuple = ()) -> dict[str, str]:
    path = Path(path).resolve()
    if path in _seen:
        raise ConfigError(f"include cycle through {path}")
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "include":
            out.update(parse_file(path.parent / value, _seen + (path,)))
        else:
            out[key] = value
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if raw.lower() in ("none", "null", "") and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(tp), typing.get_args(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if origin is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            inner = args[0] if args else str
            return tuple(_coerce(p, inner, key) for p in parts)
    except (ValueError, StopIteration) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})", key) from None
    raise ConfigError(f"unsupported field type for {key}: {tp}", key)


def build(cls, values: dict[str, str], base=None):
    """Instantiate dataclass ``cls`` from string values; unknown keys raise :class:`ConfigError`."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}", key)
        kwargs[key] = _coerce(raw, hints[key], key)
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def echo(cfg) -> dict:
    """JSON-friendly dump of a config dataclass."""
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}


def from_echo(cls, data: dict):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for k, v in data.items():
        if typing.get_origin(hints.get(k)) is tuple and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)
