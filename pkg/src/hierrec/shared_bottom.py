"""Shared Bottom baseline: shared embeddings and bottom FC layers with one
scenario-specific tower per explicit scenario."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Batch, Dataset, FeatureSchema, Vocabulary, make_batches
from .errors import ConfigError, RoutingError, StateError
from .nn import autodiff as ad
from .nn.autodiff import Var
from .nn.functional import bce_loss
from .nn.layers import FcStackConfig, fc_stack, init_fc_stack, make_param_vars
from .nn.params import ParameterStore, embedding_init

MODEL_KIND = "shared_bottom"


@dataclass
class SharedBottomConfig:
    embedding_dim: int = 16
    bottom_fc: FcStackConfig | None = None
    tower_fc: FcStackConfig | None = None  # replicated per scenario, final width 1
    num_scenarios: int = 0  # 0 means "take it from the schema"

    def resolved(self, schema: FeatureSchema) -> "SharedBottomConfig":
        d = self.embedding_dim
        flat = (schema.num_common + 1) * d
        cfg = replace(
            self,
            bottom_fc=self.bottom_fc or FcStackConfig([flat, 64, 64], "relu"),
            tower_fc=self.tower_fc or None,
            num_scenarios=self.num_scenarios or schema.scenario_cardinality,
        )
        if cfg.tower_fc is None:
            cfg = replace(cfg, tower_fc=FcStackConfig([cfg.bottom_fc.output_dim, 1], "identity"))
        cfg.validate(schema)
        return cfg

    def validate(self, schema: FeatureSchema) -> None:
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        flat = (schema.num_common + 1) * self.embedding_dim
        if self.bottom_fc.input_dim != flat:
            raise ConfigError(
                f"bottom_fc input width {self.bottom_fc.input_dim}, expected {flat}"
            )
        if self.tower_fc.input_dim != self.bottom_fc.output_dim:
            raise ConfigError("tower_fc input width must match bottom_fc output")
        if self.tower_fc.output_dim != 1:
            raise ConfigError("tower_fc final width must be 1")
        if self.num_scenarios != schema.scenario_cardinality:
            raise ConfigError(
                f"config has {self.num_scenarios} towers but schema defines "
                f"{schema.scenario_cardinality} scenarios"
            )

    def to_dict(self) -> dict:
        return {
            "embedding_dim": self.embedding_dim,
            "bottom_fc": self.bottom_fc.to_dict() if self.bottom_fc else None,
            "tower_fc": self.tower_fc.to_dict() if self.tower_fc else None,
            "num_scenarios": self.num_scenarios,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SharedBottomConfig":
        def stack(v):
            return FcStackConfig.from_dict(v) if v else None

        return cls(
            embedding_dim=int(d.get("embedding_dim", 16)),
            bottom_fc=stack(d.get("bottom_fc")),
            tower_fc=stack(d.get("tower_fc")),
            num_scenarios=int(d.get("num_scenarios", 0)),
        )


class SharedBottomModel:
    kind = MODEL_KIND

    def __init__(
        self,
        config: SharedBottomConfig,
        schema: FeatureSchema,
        vocab: Vocabulary | None = None,
        seed: int = 0,
    ):
        self.config = config.resolved(schema)
        self.schema = schema
        self.vocab = vocab or Vocabulary()
        self.store = ParameterStore()
        self._build(seed)
        self._last_pred: Var | None = None
        self._last_params: dict[str, Var] | None = None

    def _build(self, seed: int) -> None:
        cfg, schema = self.config, self.schema
        rng = np.random.default_rng([seed & (2**64 - 1), 0])
        d = cfg.embedding_dim
        self.store.add(
            "embed.scenario", embedding_init(rng, schema.scenario_cardinality, d)
        )
        for name, card in zip(schema.common_field_names, schema.common_cardinalities):
            self.store.add(f"embed.{name}", embedding_init(rng, card, d))
        init_fc_stack(self.store, "bottom", cfg.bottom_fc, rng)
        for t in range(cfg.num_scenarios):
            init_fc_stack(self.store, f"tower{t}", cfg.tower_fc, rng)

    def parameter_count(self, trainable_only: bool = True) -> int:
        return self.store.num_scalars(trainable_only)

    def forward_var(self, batch: Batch, mode: str, rng_seed: int = 0) -> tuple[Var, dict]:
        cfg = self.config
        n = len(batch)
        if n and batch.scenario_ids.max() >= cfg.num_scenarios:
            bad = int(batch.scenario_ids.max())
            raise RoutingError(f"no tower for scenario id {bad}")
        params = make_param_vars(self.store)
        parts = [ad.gather_rows(params["embed.scenario"], batch.scenario_ids)]
        parts += [
            ad.gather_rows(params[f"embed.{name}"], batch.common_ids[:, i])
            for i, name in enumerate(self.schema.common_field_names)
        ]
        bottom_in = ad.concat_cols(parts)
        bottom = fc_stack(
            cfg.bottom_fc, params, self.store, "bottom", bottom_in, mode, rng_seed
        )
        # Route each sample to its scenario's tower; un-permute afterwards.
        order = []
        tower_logits = []
        for t in range(cfg.num_scenarios):
            idx = np.flatnonzero(batch.scenario_ids == t)
            if idx.size == 0:
                continue
            order.append(idx)
            rows = ad.take_rows(bottom, idx)
            tower_logits.append(
                fc_stack(
                    cfg.tower_fc, params, self.store, f"tower{t}", rows, mode,
                    rng_seed + t + 1,
                )
            )
        permuted = ad.concat_rows(tower_logits)
        inverse = np.empty(n, dtype=np.int64)
        inverse[np.concatenate(order) if order else np.empty(0, np.int64)] = np.arange(n)
        logits = ad.take_rows(permuted, inverse)
        pred = ad.reshape(ad.predict_probs(logits), (n,))
        return pred, params

    def forward(self, batch: Batch, mode: str = "eval", rng_seed: int = 0) -> np.ndarray:
        pred, params = self.forward_var(batch, mode, rng_seed)
        self._last_pred = pred if mode == "train" else None
        self._last_params = params if mode == "train" else None
        return pred.value

    def backward(self, labels: np.ndarray) -> float:
        if self._last_pred is None or self._last_params is None:
            raise StateError("backward requires a train-mode forward")
        loss = ad.bce(self._last_pred, labels)
        ad.backward(loss)
        self.store.zero_grads()
        for name, var in self._last_params.items():
            if var.grad is not None:
                self.store.get(name).grad += var.grad
        self._last_pred = None
        self._last_params = None
        return float(loss.value)

    def loss_and_grads(self, batch: Batch, rng_seed: int = 0) -> float:
        self.forward(batch, mode="train", rng_seed=rng_seed)
        return self.backward(batch.labels)

    def predict_scores(self, ds: Dataset | Batch, batch_size: int = 4096) -> np.ndarray:
        if isinstance(ds, Batch):
            return self.forward(ds, mode="eval")
        out = np.empty(len(ds), dtype=np.float64)
        lo = 0
        for batch in make_batches(ds, batch_size, seed=0, shuffle=False):
            out[lo : lo + len(batch)] = self.forward(batch, mode="eval")
            lo += len(batch)
        return out

    def grad_check_target(self, batch: Batch):
        return _GradTarget(self, batch)


class _GradTarget:
    def __init__(self, model: SharedBottomModel, batch: Batch):
        self.model = model
        self.batch = batch
        self.store = model.store

    def loss(self) -> float:
        pred = self.model.forward(self.batch, mode="train", rng_seed=0)
        return bce_loss(pred, self.batch.labels)

    def compute_grads(self) -> None:
        self.model.forward(self.batch, mode="train", rng_seed=0)
        self.model.backward(self.batch.labels)
