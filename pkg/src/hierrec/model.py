"""The hierarchical dynamic CTR network.

Pipeline per batch: embedding lookup -> shared global reduction ->
scenario-embedding-conditioned explicit dynamic layer -> multi-head
attention over common features -> per-head implicit conditions and dynamic
layers -> concatenated head -> sigmoid. Ablation switches remove the
multi-head (-MI), implicit (-I) or explicit (-E) machinery while keeping
all downstream shapes intact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Batch, Dataset, FeatureSchema, Vocabulary, make_batches
from .dynamic import DynamicShape, dynamic_apply
from .errors import ConfigError, LookupError_, ShapeError, StateError
from .nn import autodiff as ad
from .nn.autodiff import Var
from .nn.functional import bce_loss
from .nn.layers import FcStackConfig, fc_stack, init_fc_stack, make_param_vars
from .nn.params import ParameterStore, embedding_init, glorot_uniform

MODEL_KIND = "hierrec"


def _stack_seed(rng_seed: int, stack_index: int) -> int:
    return int(
        np.random.SeedSequence([rng_seed & (2**64 - 1), stack_index]).generate_state(1)[0]
    )


@dataclass
class HierRecConfig:
    embedding_dim: int = 16
    num_heads: int = 4
    global_dim: int = 64
    explicit_out_dim: int = 64
    implicit_out_dim: int = 32
    bottleneck_r: int = 16
    global_fc: FcStackConfig | None = None
    explicit_condition_fc: FcStackConfig | None = None
    attention_fc: FcStackConfig | None = None
    implicit_condition_fc: FcStackConfig | None = None
    ablate_multi_head: bool = False
    ablate_implicit: bool = False
    ablate_explicit: bool = False

    def __post_init__(self):
        for name in (
            "embedding_dim",
            "num_heads",
            "global_dim",
            "explicit_out_dim",
            "implicit_out_dim",
            "bottleneck_r",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def effective_heads(self) -> int:
        return 1 if self.ablate_multi_head else self.num_heads

    def explicit_shape(self) -> DynamicShape:
        return DynamicShape(self.global_dim, self.bottleneck_r, self.explicit_out_dim)

    def implicit_shape(self) -> DynamicShape:
        return DynamicShape(
            self.explicit_out_dim, self.bottleneck_r, self.implicit_out_dim
        )

    def resolved(self, schema: FeatureSchema) -> "HierRecConfig":
        """Fill in default FC stacks sized for `schema` and validate."""
        d = self.embedding_dim
        flat = schema.num_common * d
        cfg = replace(
            self,
            global_fc=self.global_fc
            or FcStackConfig([flat, self.global_dim], "relu", use_batch_norm=True),
            explicit_condition_fc=self.explicit_condition_fc
            or FcStackConfig([d, self.explicit_shape().condition_length()], "identity"),
            attention_fc=self.attention_fc
            or FcStackConfig([d, self.effective_heads * schema.num_common], "identity"),
            implicit_condition_fc=self.implicit_condition_fc
            or FcStackConfig([flat, self.implicit_shape().condition_length()], "identity"),
        )
        cfg.validate(schema)
        return cfg

    def validate(self, schema: FeatureSchema) -> None:
        d = self.embedding_dim
        flat = schema.num_common * d
        checks = [
            ("global_fc", self.global_fc, flat, self.global_dim),
        ]
        if not self.ablate_explicit:
            checks.append(
                (
                    "explicit_condition_fc",
                    self.explicit_condition_fc,
                    d,
                    self.explicit_shape().condition_length(),
                )
            )
        if not self.ablate_implicit:
            checks.append(
                (
                    "attention_fc",
                    self.attention_fc,
                    d,
                    self.effective_heads * schema.num_common,
                )
            )
            checks.append(
                (
                    "implicit_condition_fc",
                    self.implicit_condition_fc,
                    flat,
                    self.implicit_shape().condition_length(),
                )
            )
        for name, stack, want_in, want_out in checks:
            if stack is None:
                raise ConfigError(f"{name} is not configured")
            if stack.input_dim != want_in:
                raise ConfigError(
                    f"{name} input width {stack.input_dim}, expected {want_in}"
                )
            if stack.output_dim != want_out:
                raise ConfigError(
                    f"{name} final width {stack.output_dim}, expected {want_out}"
                )

    def head_input_dim(self) -> int:
        if self.ablate_implicit:
            return self.explicit_out_dim
        return self.effective_heads * self.implicit_out_dim

    def to_dict(self) -> dict:
        def stack(s):
            return s.to_dict() if s is not None else None

        return {
            "embedding_dim": self.embedding_dim,
            "num_heads": self.num_heads,
            "global_dim": self.global_dim,
            "explicit_out_dim": self.explicit_out_dim,
            "implicit_out_dim": self.implicit_out_dim,
            "bottleneck_r": self.bottleneck_r,
            "global_fc": stack(self.global_fc),
            "explicit_condition_fc": stack(self.explicit_condition_fc),
            "attention_fc": stack(self.attention_fc),
            "implicit_condition_fc": stack(self.implicit_condition_fc),
            "ablate_multi_head": self.ablate_multi_head,
            "ablate_implicit": self.ablate_implicit,
            "ablate_explicit": self.ablate_explicit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierRecConfig":
        def stack(v):
            return FcStackConfig.from_dict(v) if v else None

        return cls(
            embedding_dim=int(d.get("embedding_dim", 16)),
            num_heads=int(d.get("num_heads", 4)),
            global_dim=int(d.get("global_dim", 64)),
            explicit_out_dim=int(d.get("explicit_out_dim", 64)),
            implicit_out_dim=int(d.get("implicit_out_dim", 32)),
            bottleneck_r=int(d.get("bottleneck_r", 16)),
            global_fc=stack(d.get("global_fc")),
            explicit_condition_fc=stack(d.get("explicit_condition_fc")),
            attention_fc=stack(d.get("attention_fc")),
            implicit_condition_fc=stack(d.get("implicit_condition_fc")),
            ablate_multi_head=bool(d.get("ablate_multi_head", False)),
            ablate_implicit=bool(d.get("ablate_implicit", False)),
            ablate_explicit=bool(d.get("ablate_explicit", False)),
        )


@dataclass
class ForwardTrace:
    """Intermediate batch representations of one forward pass."""

    global_repr: np.ndarray
    explicit_condition: np.ndarray | None
    explicit_repr: np.ndarray
    attn_logits: np.ndarray | None  # (n, heads, I)
    attn_weights: np.ndarray | None  # (n, heads, I), rows sum to 1
    weighted_embeds: list[np.ndarray]
    implicit_conditions: list[np.ndarray]
    implicit_reprs: list[np.ndarray]
    predictions: np.ndarray
    mode: str
    _pred_var: Var | None = None
    _param_vars: dict[str, Var] | None = None


class HierRecModel:
    kind = MODEL_KIND

    def __init__(
        self,
        config: HierRecConfig,
        schema: FeatureSchema,
        vocab: Vocabulary | None = None,
        seed: int = 0,
    ):
        self.config = config.resolved(schema)
        self.schema = schema
        self.vocab = vocab or Vocabulary()
        self.store = ParameterStore()
        self._build(seed)

    def _build(self, seed: int) -> None:
        cfg, schema = self.config, self.schema
        rng = np.random.default_rng([seed & (2**64 - 1), 0])
        d = cfg.embedding_dim
        self.store.add(
            "embed.scenario", embedding_init(rng, schema.scenario_cardinality, d)
        )
        for name, card in zip(schema.common_field_names, schema.common_cardinalities):
            self.store.add(f"embed.{name}", embedding_init(rng, card, d))
        init_fc_stack(self.store, "global_fc", cfg.global_fc, rng)
        if cfg.ablate_explicit:
            self.store.add(
                "explicit_proj.w",
                glorot_uniform(rng, cfg.global_dim, cfg.explicit_out_dim),
            )
            self.store.add("explicit_proj.b", np.zeros((1, cfg.explicit_out_dim)))
        else:
            init_fc_stack(self.store, "explicit_cond", cfg.explicit_condition_fc, rng)
        if not cfg.ablate_implicit:
            init_fc_stack(self.store, "attention", cfg.attention_fc, rng)
            init_fc_stack(self.store, "implicit_cond", cfg.implicit_condition_fc, rng)
        head_in = cfg.head_input_dim()
        self.store.add("head.w", glorot_uniform(rng, head_in, 1))
        self.store.add("head.b", np.zeros((1, 1)))

    def parameter_count(self, trainable_only: bool = True) -> int:
        return self.store.num_scalars(trainable_only)

    def _check_indices(self, batch: Batch) -> None:
        s = batch.scenario_ids
        if s.size and (s.min() < 0 or s.max() >= self.schema.scenario_cardinality):
            row = int(np.argmax((s < 0) | (s >= self.schema.scenario_cardinality)))
            raise LookupError_(
                f"scenario id {int(s[row])} out of range at row {row} "
                f"(field {self.schema.scenario_field_name!r})"
            )
        for i, (name, card) in enumerate(
            zip(self.schema.common_field_names, self.schema.common_cardinalities)
        ):
            col = batch.common_ids[:, i]
            if col.size and (col.min() < 0 or col.max() >= card):
                row = int(np.argmax((col < 0) | (col >= card)))
                raise LookupError_(
                    f"index {int(col[row])} out of range at row {row} (field {name!r})"
                )

    def _embed(self, params: dict[str, Var], batch: Batch) -> tuple[Var, Var]:
        self._check_indices(batch)
        e_s = ad.gather_rows(params["embed.scenario"], batch.scenario_ids)
        parts = [
            ad.gather_rows(params[f"embed.{name}"], batch.common_ids[:, i])
            for i, name in enumerate(self.schema.common_field_names)
        ]
        return e_s, ad.concat_cols(parts)

    def embed_batch(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        """Scenario embedding rows and concatenated common-feature rows."""
        params = make_param_vars(self.store)
        e_s, e_c = self._embed(params, batch)
        return e_s.value, e_c.value

    def forward(self, batch: Batch, mode: str = "eval", rng_seed: int = 0) -> ForwardTrace:
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        cfg = self.config
        n = len(batch)
        I = self.schema.num_common
        d = cfg.embedding_dim
        params = make_param_vars(self.store)
        try:
            e_s, e_c = self._embed(params, batch)
            o_global = fc_stack(
                cfg.global_fc, params, self.store, "global_fc", e_c, mode,
                _stack_seed(rng_seed, 0),
            )
        except ShapeError as err:
            raise ShapeError(f"global stage: {err}") from err

        if cfg.ablate_explicit:
            o_explicit = ad.add(
                ad.matmul(o_global, params["explicit_proj.w"]), params["explicit_proj.b"]
            )
            sc_explicit = None
        else:
            try:
                sc_explicit = fc_stack(
                    cfg.explicit_condition_fc, params, self.store, "explicit_cond",
                    e_s, mode, _stack_seed(rng_seed, 1),
                )
                o_explicit = dynamic_apply(sc_explicit, o_global, cfg.explicit_shape())
            except ShapeError as err:
                raise ShapeError(f"explicit stage: {err}") from err

        attn_logit_heads: list[Var] = []
        attn_weight_heads: list[Var] = []
        weighted: list[Var] = []
        conditions: list[Var] = []
        implicit_outs: list[Var] = []
        if cfg.ablate_implicit:
            head_in = o_explicit
        else:
            heads = cfg.effective_heads
            try:
                att = fc_stack(
                    cfg.attention_fc, params, self.store, "attention", e_s, mode,
                    _stack_seed(rng_seed, 2),
                )
                e_c3 = ad.reshape(e_c, (n, I, d))
                for g in range(heads):
                    logits_g = ad.slice_cols(att, g * I, (g + 1) * I)
                    w_g = ad.softmax_rows(logits_g)
                    attn_logit_heads.append(logits_g)
                    attn_weight_heads.append(w_g)
                    ie_g = ad.reshape(
                        ad.mul(e_c3, ad.reshape(w_g, (n, I, 1))), (n, I * d)
                    )
                    weighted.append(ie_g)
                    sc_g = fc_stack(
                        cfg.implicit_condition_fc, params, self.store, "implicit_cond",
                        ie_g, mode, _stack_seed(rng_seed, 3 + g),
                    )
                    conditions.append(sc_g)
                    implicit_outs.append(
                        dynamic_apply(sc_g, o_explicit, cfg.implicit_shape())
                    )
                head_in = (
                    implicit_outs[0]
                    if heads == 1
                    else ad.concat_cols(implicit_outs)
                )
            except ShapeError as err:
                raise ShapeError(f"implicit stage: {err}") from err

        logits = ad.add(ad.matmul(head_in, params["head.w"]), params["head.b"])
        pred = ad.reshape(ad.predict_probs(logits), (n,))

        stack3 = lambda vs: (
            np.stack([v.value for v in vs], axis=1) if vs else None
        )
        return ForwardTrace(
            global_repr=o_global.value,
            explicit_condition=None if sc_explicit is None else sc_explicit.value,
            explicit_repr=o_explicit.value,
            attn_logits=stack3(attn_logit_heads),
            attn_weights=stack3(attn_weight_heads),
            weighted_embeds=[v.value for v in weighted],
            implicit_conditions=[v.value for v in conditions],
            implicit_reprs=[v.value for v in implicit_outs],
            predictions=pred.value,
            mode=mode,
            _pred_var=pred,
            _param_vars=params,
        )

    def backward(self, trace: ForwardTrace, labels: np.ndarray) -> float:
        """BCE backward into the store's gradient buffers; returns the loss."""
        if trace._pred_var is None or trace._param_vars is None:
            raise StateError("backward requires a recorded forward tape")
        if trace.mode != "train":
            raise StateError("backward requires a train-mode forward")
        loss = ad.bce(trace._pred_var, labels)
        ad.backward(loss)
        self.store.zero_grads()
        for name, var in trace._param_vars.items():
            if var.grad is not None:
                self.store.get(name).grad += var.grad
        return float(loss.value)

    def loss_and_grads(self, batch: Batch, rng_seed: int = 0) -> float:
        """One train-mode forward/backward; fills gradients, returns the loss."""
        trace = self.forward(batch, mode="train", rng_seed=rng_seed)
        return self.backward(trace, batch.labels)

    def predict_scores(self, ds: Dataset | Batch, batch_size: int = 4096) -> np.ndarray:
        """Eval-mode click probabilities, in dataset order."""
        if isinstance(ds, Batch):
            return self.forward(ds, mode="eval").predictions
        out = np.empty(len(ds), dtype=np.float64)
        lo = 0
        for batch in make_batches(ds, batch_size, seed=0, shuffle=False):
            out[lo : lo + len(batch)] = self.forward(batch, mode="eval").predictions
            lo += len(batch)
        return out

    def attention_matrix(self, scenario_id: int) -> np.ndarray:
        """Normalized (heads, I) attention weights for one scenario id."""
        if self.config.ablate_implicit:
            raise StateError("model has no attention module (implicit path ablated)")
        batch = Batch(
            scenario_ids=np.array([scenario_id]),
            common_ids=np.zeros((1, self.schema.num_common), dtype=np.int64),
            labels=np.zeros(1, dtype=np.int64),
        )
        trace = self.forward(batch, mode="eval")
        return trace.attn_weights[0]

    def grad_check_target(self, batch: Batch):
        return _GradTarget(self, batch)


class _GradTarget:
    """Adapter exposing loss()/compute_grads() for the FD checker."""

    def __init__(self, model, batch: Batch):
        self.model = model
        self.batch = batch
        self.store = model.store

    def loss(self) -> float:
        trace = self.model.forward(self.batch, mode="train", rng_seed=0)
        return bce_loss(trace.predictions, self.batch.labels)

    def compute_grads(self) -> None:
        trace = self.model.forward(self.batch, mode="train", rng_seed=0)
        self.model.backward(trace, self.batch.labels)


def export_attention_weights(model: HierRecModel, path: str | Path) -> None:
    """Per-scenario attention weights as CSV: scenario_id, head, feature, weight."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "head", "feature", "weight"])
        for s in range(model.schema.scenario_cardinality):
            weights = model.attention_matrix(s)
            for g in range(weights.shape[0]):
                for i, name in enumerate(model.schema.common_field_names):
                    writer.writerow([s, g, name, f"{weights[g, i]:.10g}"])
