"""Run configuration: one JSON document driving every CLI command."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import (
    Dataset,
    FeatureSchema,
    SyntheticSpec,
    Vocabulary,
    generate_synthetic,
    parse_csv,
)
from .errors import ConfigError
from .model import HierRecConfig, HierRecModel
from .shared_bottom import SharedBottomConfig, SharedBottomModel

MODEL_KINDS = ("hierrec", "shared_bottom")


@dataclass
class CsvSource:
    train_csv: str
    val_csv: str
    test_csv: str
    schema: FeatureSchema
    vocab_path: str | None = None


@dataclass
class RunConfig:
    model_kind: str = "hierrec"
    synthetic: SyntheticSpec | None = None
    csv: CsvSource | None = None
    model: dict | None = None  # raw model-config section
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 20
    early_stop_patience: int = 3
    seed: int = 0
    num_runs: int = 1

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(
                f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}"
            )
        if (self.synthetic is None) == (self.csv is None):
            raise ConfigError(
                "exactly one data source required: 'synthetic' or 'csv'"
            )
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.num_runs < 1:
            raise ConfigError("num_runs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        data = d.get("data")
        if not isinstance(data, dict):
            raise ConfigError("config must contain a 'data' section")
        synthetic = None
        csv_src = None
        if "synthetic" in data:
            synthetic = SyntheticSpec.from_dict(data["synthetic"])
        if "csv" in data:
            c = data["csv"]
            try:
                csv_src = CsvSource(
                    train_csv=c["train_csv"],
                    val_csv=c["val_csv"],
                    test_csv=c["test_csv"],
                    schema=FeatureSchema.from_dict(c["schema"]),
                    vocab_path=c.get("vocab_path"),
                )
            except KeyError as err:
                raise ConfigError(f"csv data source missing key {err}") from None
        return cls(
            model_kind=d.get("model_kind", "hierrec"),
            synthetic=synthetic,
            csv=csv_src,
            model=d.get("model"),
            learning_rate=float(d.get("learning_rate", 1e-3)),
            batch_size=int(d.get("batch_size", 256)),
            max_epochs=int(d.get("max_epochs", 20)),
            early_stop_patience=int(d.get("early_stop_patience", 3)),
            seed=int(d.get("seed", 0)),
            num_runs=int(d.get("num_runs", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from err
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def schema(self) -> FeatureSchema:
        if self.synthetic is not None:
            return self.synthetic.schema()
        return self.csv.schema

    def load_datasets(self) -> tuple[Dataset, Dataset, Dataset, Vocabulary | None]:
        if self.synthetic is not None:
            train, val, test, _ = generate_synthetic(self.synthetic)
            return train, val, test, None
        vocab = (
            Vocabulary.load(self.csv.vocab_path) if self.csv.vocab_path else None
        )
        schema = self.csv.schema
        train = parse_csv(self.csv.train_csv, schema, vocab, split_tag="train")
        val = parse_csv(self.csv.val_csv, schema, vocab, split_tag="val")
        test = parse_csv(self.csv.test_csv, schema, vocab, split_tag="test")
        return train, val, test, vocab

    def model_config(self):
        raw = self.model or {}
        if self.model_kind == "hierrec":
            return HierRecConfig.from_dict(raw)
        return SharedBottomConfig.from_dict(raw)

    def build_model(self, seed: int | None = None, vocab: Vocabulary | None = None):
        """Construct and validate the model against the configured schema."""
        schema = self.schema()
        cfg = self.model_config()
        model_seed = self.seed if seed is None else seed
        if self.model_kind == "hierrec":
            return HierRecModel(cfg, schema, vocab, seed=model_seed)
        return SharedBottomModel(cfg, schema, vocab, seed=model_seed)
