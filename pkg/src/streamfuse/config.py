"""Flat key=value config files and typed application onto dataclasses."""

from __future__ import annotations

import dataclasses


def parse_kv_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def parse_kv_pairs(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ValueError(f"expected key=value, got {p!r}")
        key, value = p.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def apply_overrides(cfg, overrides: dict):
    """New dataclass instance with string overrides coerced to field types.

    Only scalar (int/float/bool/str) fields are settable from config text.
    """
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    changes = {}
    for key, value in overrides.items():
        if key not in fields:
            raise KeyError(f"unknown config key {key!r}; valid keys: {sorted(fields)}")
        current = getattr(cfg, key)
        target = type(current) if current is not None else str
        if target not in (int, float, bool, str):
            raise ValueError(f"config key {key!r} is not settable from text")
        changes[key] = _coerce(value, target)
    return dataclasses.replace(cfg, **changes)
