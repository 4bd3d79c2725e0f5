"""Flat ``key=value`` config files mapped onto (possibly nested) dataclasses.

Nested dataclass fields are addressed with dotted keys (``net.channels=16``).
Tuples are written comma-separated, booleans as true/false.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .errors import InvalidConfig


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints.get(f.name, f.type) for f in dataclasses.fields(cls) if f.init}


def flat_keys(cls, prefix: str = "") -> list[str]:
    """Every nameable key of a config dataclass, dotted for nested records."""
    keys = []
    for name, tp in _field_types(cls).items():
        if dataclasses.is_dataclass(tp):
            keys += flat_keys(tp, f"{prefix}{name}.")
        else:
            keys.append(prefix + name)
    return keys


def _parse_value(raw: str, default, tp):
    raw = raw.strip()
    if isinstance(default, bool) or tp is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(type(default[0])(p) if default else float(p) for p in parts)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None and raw.lower() in ("", "none"):
        return None
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "none" if v is None else str(v)


def apply_overrides(cfg, overrides: dict):
    """Return a copy of ``cfg`` with dotted-key string overrides applied."""
    nested: dict[str, dict] = {}
    direct = {}
    types = _field_types(type(cfg))
    for key, raw in overrides.items():
        head, _, rest = key.partition(".")
        if head not in types:
            raise InvalidConfig(f"unknown config key {key!r}")
        if rest:
            if not dataclasses.is_dataclass(types[head]):
                raise InvalidConfig(f"unknown config key {key!r}")
            nested.setdefault(head, {})[rest] = raw
        else:
            if dataclasses.is_dataclass(types[head]):
                raise InvalidConfig(f"config key {key!r} names a section, not a value")
            default = getattr(cfg, head)
            try:
                direct[head] = _parse_value(str(raw), default, types[head])
            except ValueError as e:
                raise InvalidConfig(f"bad value for {key!r}: {e}") from e
    for head, sub in nested.items():
        direct[head] = apply_overrides(getattr(cfg, head), sub)
    return dataclasses.replace(cfg, **direct)


def parse_lines(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(cls, path=None, overrides: dict | None = None):
    """Defaults of ``cls``, then the file at ``path``, then ``overrides``."""
    cfg = cls()
    if path is not None:
        cfg = apply_overrides(cfg, parse_lines(Path(path).read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def dump_config(cfg, prefix: str = "") -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        if not f.init:
            continue
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            lines.append(dump_config(v, f"{prefix}{f.name}.").rstrip("\n"))
        else:
            lines.append(f"{prefix}{f.name}={_format_value(v)}")
    return "\n".join(lines) + "\n"
