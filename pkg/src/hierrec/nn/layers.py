"""The configurable FC block: affine -> batch norm -> dropout -> activation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from . import autodiff as ad
from .autodiff import Var
from .params import ParameterStore, glorot_uniform

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class FcStackConfig:
    """K stacked FC layers; layer_sizes is [input_dim, out_1, ..., out_K]."""

    layer_sizes: list[int]
    activation: str = "relu"
    dropout_rate: float = 0.0
    use_batch_norm: bool = False
    bn_momentum: float = 0.9

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ConfigError("fc stack needs at least one layer (two sizes)")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"fc layer sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigError("bn_momentum must be in (0, 1)")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def num_params(self) -> int:
        """Trainable scalar count: weights, biases and BN scale/shift."""
        total = 0
        for i in range(self.num_layers):
            fan_in, fan_out = self.layer_sizes[i], self.layer_sizes[i + 1]
            total += fan_in * fan_out + fan_out
            if self.use_batch_norm:
                total += 2 * fan_out
        return total

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "use_batch_norm": self.use_batch_norm,
            "bn_momentum": self.bn_momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FcStackConfig":
        return cls(**d)


@dataclass
class BatchNormState:
    """Per-feature running statistics plus learned scale/shift names."""

    running_mean: np.ndarray
    running_var: np.ndarray
    gamma_name: str
    beta_name: str


def init_fc_stack(
    store: ParameterStore, prefix: str, cfg: FcStackConfig, rng: np.random.Generator
) -> None:
    """Register all tensors of one stack under `prefix`."""
    for k in range(cfg.num_layers):
        fan_in, fan_out = cfg.layer_sizes[k], cfg.layer_sizes[k + 1]
        store.add(f"{prefix}.l{k}.w", glorot_uniform(rng, fan_in, fan_out))
        store.add(f"{prefix}.l{k}.b", np.zeros((1, fan_out)))
        if cfg.use_batch_norm:
            store.add(f"{prefix}.l{k}.bn_gamma", np.ones((1, fan_out)))
            store.add(f"{prefix}.l{k}.bn_beta", np.zeros((1, fan_out)))
            store.add(
                f"{prefix}.l{k}.bn_mean", np.zeros((1, fan_out)), trainable=False
            )
            store.add(f"{prefix}.l{k}.bn_var", np.ones((1, fan_out)), trainable=False)


def fc_stack(
    cfg: FcStackConfig,
    params: dict[str, Var],
    store: ParameterStore,
    prefix: str,
    x: Var,
    mode: str,
    rng_seed: int,
) -> Var:
    """Tape-building forward of the stack; `params` maps names to leaf Vars."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.value.ndim != 2 or x.value.shape[1] != cfg.input_dim:
        raise ShapeError(
            f"{prefix}: expected input width {cfg.input_dim}, "
            f"got shape {x.value.shape}"
        )
    train = mode == "train"
    h = x
    for k in range(cfg.num_layers):
        w = params[f"{prefix}.l{k}.w"]
        b = params[f"{prefix}.l{k}.b"]
        h = ad.add(ad.matmul(h, w), b)
        if cfg.use_batch_norm:
            h = ad.batch_norm(
                h,
                params[f"{prefix}.l{k}.bn_gamma"],
                params[f"{prefix}.l{k}.bn_beta"],
                store.value(f"{prefix}.l{k}.bn_mean")[0],
                store.value(f"{prefix}.l{k}.bn_var")[0],
                train=train,
                momentum=cfg.bn_momentum,
            )
        if train and cfg.dropout_rate > 0.0:
            rng = np.random.default_rng([rng_seed, k])
            h = ad.dropout(h, cfg.dropout_rate, rng)
        if cfg.activation == "relu":
            h = ad.relu(h)
        elif cfg.activation == "tanh":
            h = ad.tanh(h)
    return h


def make_param_vars(store: ParameterStore) -> dict[str, Var]:
    """Wrap every store entry in a leaf Var for one forward pass."""
    return {name: ad.leaf(e.value, name) for name, e in store.entries.items()}


def fc_stack_forward(
    cfg: FcStackConfig,
    store: ParameterStore,
    prefix: str,
    x: np.ndarray,
    mode: str = "eval",
    rng_seed: int = 0,
) -> np.ndarray:
    """Array-in/array-out wrapper around the tape-building forward."""
    params = make_param_vars(store)
    out = fc_stack(cfg, params, store, prefix, ad.leaf(np.asarray(x, float)), mode, rng_seed)
    return out.value
