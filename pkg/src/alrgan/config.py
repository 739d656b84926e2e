"""Flat key=value run configuration: trivially diffable in sweep outputs.

``RunConfig`` carries every model/objective knob plus the operational fields
(dataset size, eval cadence, output directory). Parsing is strict: unknown
keys and untypable values are config errors. The ALR_SEED env var, when set,
overrides the seed after parsing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .gan import GanConfig


@dataclass
class RunConfig(GanConfig):
    dataset_size: int = 256
    eval_size: int = 64
    eval_every: int = 1000
    out_dir: str = "runs/default"

    def gan_config(self) -> GanConfig:
        return GanConfig(**{f.name: getattr(self, f.name) for f in fields(GanConfig)})


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def loads(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, _FIELDS[key])
    try:
        cfg = RunConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if "ALR_SEED" in os.environ:
        try:
            cfg.seed = int(os.environ["ALR_SEED"])
        except ValueError as exc:
            raise ConfigError(f"ALR_SEED must be an integer: {os.environ['ALR_SEED']!r}") from exc
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def dumps(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def dump(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
