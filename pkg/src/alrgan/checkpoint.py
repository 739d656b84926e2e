"""Versioned parameter checkpoints bound to a config identity hash."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .gan import GanModel

FORMAT_VERSION = "alrgan-ckpt-1"


def save(path, model: GanModel, step: int) -> None:
    arrays = {"__version__": np.frombuffer(FORMAT_VERSION.encode(), dtype=np.uint8)}
    arrays["__config_hash__"] = np.frombuffer(
        model.cfg.identity_hash().encode(), dtype=np.uint8
    )
    arrays["__step__"] = np.asarray(step, dtype=np.int64)
    for name, p in model.g_param_items() + model.d_param_items():
        arrays["p:" + name] = p.data
    np.savez(path, **arrays)


def load(path, model: GanModel) -> int:
    """Restore parameters in place; refuses version or config-hash mismatches."""
    with np.load(path) as blob:
        version = blob["__version__"].tobytes().decode()
        if version != FORMAT_VERSION:
            raise ConfigError(f"checkpoint format {version!r} != {FORMAT_VERSION!r}")
        stored = blob["__config_hash__"].tobytes().decode()
        current = model.cfg.identity_hash()
        if stored != current:
            raise ConfigError(
                f"checkpoint config hash {stored} does not match current config {current}"
            )
        for name, p in model.g_param_items() + model.d_param_items():
            arr = blob["p:" + name]
            if arr.shape != p.data.shape:
                raise ConfigError(f"parameter {name} shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr
        return int(blob["__step__"])
