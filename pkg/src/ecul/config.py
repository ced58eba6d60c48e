"""Flat `key = value` configuration files with strict key checking."""
from __future__ import annotations

from dataclasses import fields

from .synth import SynthSpec
from .trainer import TrainConfig

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


class ConfigError(ValueError):
    pass


def parse_flat_config(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: str, target_type):
    try:
        if target_type is bool:
            lowered = value.lower()
            if lowered not in _BOOL:
                raise ValueError
            return _BOOL[lowered]
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {value!r} as {target_type.__name__}")


def _from_mapping(cls, raw: dict[str, str], skip=()):
    known = {f.name: f.type for f in fields(cls) if f.name not in skip}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, value, types.get(known[key], str))
    return cls(**kwargs)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        raw = parse_flat_config(fh.read())
    return _from_mapping(TrainConfig, raw, skip=("loss_weights",))


def load_synth_spec(path) -> SynthSpec:
    with open(path) as fh:
        raw = parse_flat_config(fh.read())
    return _from_mapping(SynthSpec, raw)
