"""Named parameter tensors with paired gradient and Adam moment buffers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    trainable: bool = True


class ParameterStore:
    """All tensors of one model, addressable by name.

    Non-trainable entries (batch-norm running statistics) share the store so
    checkpoints capture the full model state, but the optimizer skips them.
    """

    def __init__(self):
        self.entries: dict[str, ParamEntry] = {}
        self.step_count: int = 0

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> np.ndarray:
        if name in self.entries:
            raise ConfigError(f"duplicate parameter name {name!r}")
        val = np.array(value, dtype=np.float64)
        if val.ndim != 2:
            raise ShapeError(f"parameter {name!r} must be 2D, got shape {val.shape}")
        self.entries[name] = ParamEntry(
            value=val,
            grad=np.zeros_like(val),
            adam_m=np.zeros_like(val),
            adam_v=np.zeros_like(val),
            trainable=trainable,
        )
        return val

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def get(self, name: str) -> ParamEntry:
        return self.entries[name]

    def value(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def names(self) -> list[str]:
        return list(self.entries)

    def zero_grads(self) -> None:
        for e in self.entries.values():
            e.grad.fill(0.0)

    def num_scalars(self, trainable_only: bool = True) -> int:
        return sum(
            e.value.size
            for e in self.entries.values()
            if e.trainable or not trainable_only
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        """Deep copy of all values (used for best-epoch tracking)."""
        return {k: e.value.copy() for k, e in self.entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            np.copyto(self.entries[k].value, v)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def embedding_init(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return rng.normal(0.0, 0.01, size=(rows, dim))
