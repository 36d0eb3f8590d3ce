"""Adam with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .params import ParameterStore


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One update over all trainable entries from their current gradients."""
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for entry in store.entries.values():
        if not entry.trainable:
            continue
        entry.adam_m *= beta1
        entry.adam_m += (1.0 - beta1) * entry.grad
        entry.adam_v *= beta2
        entry.adam_v += (1.0 - beta2) * entry.grad**2
        m_hat = entry.adam_m / bc1
        v_hat = entry.adam_v / bc2
        entry.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
