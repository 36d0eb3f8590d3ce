"""Scenario-conditioned dynamic layers.

A flat condition vector is reshaped into the weights and biases of two
stacked linear layers (a low-rank bottleneck followed by an expansion) and
applied to a batch. The flat layout is fixed as [W1 row-major, b1, W2
row-major, b2] so checkpoints and condition generators agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import autodiff as ad
from .nn.autodiff import Var

NUM_DYNAMIC_LAYERS = 2


@dataclass(frozen=True)
class DynamicShape:
    input_dim: int
    bottleneck_dim: int
    output_dim: int

    def condition_length(self) -> int:
        r = self.bottleneck_dim
        return self.input_dim * r + r + r * self.output_dim + self.output_dim


@dataclass
class ScenarioCondition:
    values: np.ndarray
    shape: DynamicShape

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        expected = self.shape.condition_length()
        if self.values.size != expected:
            raise ShapeError(
                f"condition length {self.values.size}, expected {expected} "
                f"for shape {self.shape}"
            )


@dataclass
class DynamicLayerSet:
    w1: np.ndarray  # (r, input_dim)
    b1: np.ndarray  # (r,)
    w2: np.ndarray  # (output_dim, r)
    b2: np.ndarray  # (output_dim,)


def reshape_condition(sc: ScenarioCondition) -> DynamicLayerSet:
    """Split a flat condition into the two layers' weights and biases."""
    d, r, out = sc.shape.input_dim, sc.shape.bottleneck_dim, sc.shape.output_dim
    v = sc.values
    o = 0
    w1 = v[o : o + r * d].reshape(r, d)
    o += r * d
    b1 = v[o : o + r]
    o += r
    w2 = v[o : o + out * r].reshape(out, r)
    o += out * r
    b2 = v[o : o + out]
    return DynamicLayerSet(w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=b2.copy())


def flatten_layers(layers: DynamicLayerSet, shape: DynamicShape) -> ScenarioCondition:
    """Inverse of reshape_condition; exact bijection."""
    expect = [
        (shape.bottleneck_dim, shape.input_dim),
        (shape.bottleneck_dim,),
        (shape.output_dim, shape.bottleneck_dim),
        (shape.output_dim,),
    ]
    arrays = [layers.w1, layers.b1, layers.w2, layers.b2]
    for arr, shp in zip(arrays, expect):
        if tuple(np.shape(arr)) != shp:
            raise ShapeError(f"layer tensor shape {np.shape(arr)}, expected {shp}")
    flat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
    return ScenarioCondition(values=flat, shape=shape)


def dynamic_forward(h: np.ndarray, layers: DynamicLayerSet) -> np.ndarray:
    """Apply the two linear layers to a batch: W2(W1 h + b1) + b2.

    No activation sits between the layers; the bottleneck acts as a
    conditioned low-rank factorization of one linear map.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != layers.w1.shape[1]:
        raise ShapeError(
            f"dynamic_forward: input shape {h.shape}, "
            f"expected (*, {layers.w1.shape[1]})"
        )
    h2 = h @ layers.w1.T + layers.b1
    return h2 @ layers.w2.T + layers.b2


def dynamic_apply(cond: Var, h: Var, shape: DynamicShape) -> Var:
    """Batched tape op: row j of `cond` parameterizes the layers for row j of `h`."""
    n = h.value.shape[0]
    if cond.value.shape != (n, shape.condition_length()):
        raise ShapeError(
            f"dynamic_apply: conditions {cond.value.shape}, expected "
            f"({n}, {shape.condition_length()})"
        )
    if h.value.shape[1] != shape.input_dim:
        raise ShapeError(
            f"dynamic_apply: input width {h.value.shape[1]}, "
            f"expected {shape.input_dim}"
        )
    d, r, out = shape.input_dim, shape.bottleneck_dim, shape.output_dim
    o = 0
    w1 = ad.reshape(ad.slice_cols(cond, o, o + r * d), (n, r, d))
    o += r * d
    b1 = ad.slice_cols(cond, o, o + r)
    o += r
    w2 = ad.reshape(ad.slice_cols(cond, o, o + out * r), (n, out, r))
    o += out * r
    b2 = ad.slice_cols(cond, o, o + out)
    h2 = ad.add(ad.bmm_vec(w1, h), b1)
    return ad.add(ad.bmm_vec(w2, h2), b2)
