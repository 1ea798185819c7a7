"""Flat ``key = value`` config files mapped onto dataclasses.

Tuples are written comma-separated; ``none`` maps to None; ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Dict, Iterable, Type, TypeVar

T = TypeVar("T")


class ConfigFileError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"{source}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def read_kv(path) -> Dict[str, str]:
    p = Path(path)
    try:
        return parse_kv(p.read_text(), str(p))
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {p}: {exc}") from exc


def _convert(value: str, tp: Any, default: Any) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if value.lower() == "none" and (default is None or type(None) in args):
        return None
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], default)
    if origin in (tuple, list) or isinstance(default, (tuple, list)):
        elem = args[0] if args else type(default[0]) if default else str
        items = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(_convert(v, elem, None) for v in items)
    if tp is bool or isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp is int or isinstance(default, int):
        return int(value)
    if tp is float or isinstance(default, float):
        return float(value)
    return value


def build(cls: Type[T], values: Dict[str, str], **fixed: Any) -> T:
    """Instantiate ``cls`` from string values; keys not in ``cls`` are ignored."""
    hints = typing.get_type_hints(cls)
    kwargs: Dict[str, Any] = {}
    for f in dataclasses.fields(cls):  # type: ignore[arg-type]
        if f.name not in values:
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        try:
            kwargs[f.name] = _convert(values[f.name], hints.get(f.name, str), default)
        except ValueError as exc:
            raise ConfigFileError(f"{f.name}: {exc}") from exc
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from exc


def unknown_keys(values: Dict[str, str], classes: Iterable[type]) -> list:
    known = {f.name for c in classes for f in dataclasses.fields(c)}
    return sorted(k for k in values if k not in known)


def dump(obj: Any) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (tuple, list)):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
