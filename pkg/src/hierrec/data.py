"""Sample schema, CSV ingestion, vocabularies, synthetic data and batching."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, ParseError, SchemaError
from .nn.functional import sigmoid

# Base click logit of the synthetic generator; all planted effects are
# offsets around it.
SYNTHETIC_BASE_LOGIT = -1.0


@dataclass(frozen=True)
class FeatureSchema:
    """Field names and cardinalities: one scenario field, I common fields."""

    scenario_field_name: str
    common_field_names: tuple[str, ...]
    scenario_cardinality: int
    common_cardinalities: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "common_field_names", tuple(self.common_field_names))
        object.__setattr__(
            self, "common_cardinalities", tuple(self.common_cardinalities)
        )
        if len(self.common_field_names) < 1:
            raise SchemaError("need at least one common feature field")
        if len(self.common_field_names) != len(self.common_cardinalities):
            raise SchemaError("field name / cardinality count mismatch")
        names = (self.scenario_field_name, *self.common_field_names)
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in {names}")
        if self.scenario_cardinality < 1 or any(
            c < 1 for c in self.common_cardinalities
        ):
            raise SchemaError("cardinalities must be >= 1")

    @property
    def num_common(self) -> int:
        return len(self.common_field_names)

    def to_dict(self) -> dict:
        return {
            "scenario_field": self.scenario_field_name,
            "common_fields": list(self.common_field_names),
            "scenario_cardinality": self.scenario_cardinality,
            "common_cardinalities": list(self.common_cardinalities),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            scenario_field_name=d["scenario_field"],
            common_field_names=tuple(d["common_fields"]),
            scenario_cardinality=int(d["scenario_cardinality"]),
            common_cardinalities=tuple(int(c) for c in d["common_cardinalities"]),
        )


@dataclass(frozen=True)
class Sample:
    scenario_id: int
    common_ids: tuple[int, ...]
    label: int


class Dataset:
    """Immutable columnar store of samples satisfying one schema."""

    def __init__(
        self,
        schema: FeatureSchema,
        scenario_ids: np.ndarray,
        common_ids: np.ndarray,
        labels: np.ndarray,
        split_tag: str = "train",
    ):
        self.schema = schema
        self.scenario_ids = np.asarray(scenario_ids, dtype=np.int64)
        self.common_ids = np.asarray(common_ids, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.split_tag = split_tag
        n = self.scenario_ids.shape[0]
        if self.common_ids.shape != (n, schema.num_common):
            raise SchemaError(
                f"common_ids shape {self.common_ids.shape}, "
                f"expected ({n}, {schema.num_common})"
            )
        if self.labels.shape != (n,):
            raise SchemaError("labels length mismatch")
        self._validate_bounds()
        for arr in (self.scenario_ids, self.common_ids, self.labels):
            arr.setflags(write=False)

    def _validate_bounds(self):
        if self.scenario_ids.size == 0:
            return
        if self.scenario_ids.min() < 0 or (
            self.scenario_ids.max() >= self.schema.scenario_cardinality
        ):
            raise SchemaError("scenario id out of range")
        for i, card in enumerate(self.schema.common_cardinalities):
            col = self.common_ids[:, i]
            if col.min() < 0 or col.max() >= card:
                raise SchemaError(
                    f"feature {self.schema.common_field_names[i]!r} index out of range"
                )
        bad = ~np.isin(self.labels, (0, 1))
        if bad.any():
            raise SchemaError("labels must be 0/1")

    def __len__(self) -> int:
        return int(self.scenario_ids.shape[0])

    def sample(self, i: int) -> Sample:
        return Sample(
            scenario_id=int(self.scenario_ids[i]),
            common_ids=tuple(int(v) for v in self.common_ids[i]),
            label=int(self.labels[i]),
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.schema,
            self.scenario_ids[idx],
            self.common_ids[idx],
            self.labels[idx],
            self.split_tag,
        )

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [self.schema.scenario_field_name, *self.schema.common_field_names, "label"]
            )
            for s, row, y in zip(self.scenario_ids, self.common_ids, self.labels):
                writer.writerow([int(s), *(int(v) for v in row), int(y)])


@dataclass(frozen=True)
class Batch:
    scenario_ids: np.ndarray
    common_ids: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.scenario_ids.shape[0])


class Vocabulary:
    """Per-field mapping raw string -> dense index; index 0 is reserved OOV."""

    def __init__(self, tables: dict[str, dict[str, int]] | None = None):
        self.tables = tables or {}

    @classmethod
    def build(cls, csv_paths: list[str | Path], fields: list[str]) -> "Vocabulary":
        tables: dict[str, dict[str, int]] = {f: {} for f in fields}
        for path in csv_paths:
            with Path(path).open(newline="") as fh:
                reader = csv.DictReader(fh)
                missing = [f for f in fields if f not in (reader.fieldnames or [])]
                if missing:
                    raise SchemaError(f"{path}: missing column(s) {missing}")
                for row in reader:
                    for f in fields:
                        raw = row[f]
                        if raw not in tables[f]:
                            tables[f][raw] = len(tables[f]) + 1  # 0 stays OOV
        return cls(tables)

    def encode(self, field: str, raw: str) -> int:
        return self.tables.get(field, {}).get(raw, 0)

    def decode(self, field: str, index: int) -> str | None:
        for raw, idx in self.tables.get(field, {}).items():
            if idx == index:
                return raw
        return None

    def size(self, field: str) -> int:
        return len(self.tables.get(field, {})) + 1  # plus OOV slot

    def to_dict(self) -> dict:
        return {f: dict(t) for f, t in self.tables.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls({f: {k: int(v) for k, v in t.items()} for f, t in d.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def parse_csv(
    path: str | Path,
    schema: FeatureSchema,
    vocab: Vocabulary | None = None,
    split_tag: str = "train",
) -> Dataset:
    """Read one CSV into a Dataset.

    Without a vocabulary, raw values must already be integer indices within
    the schema's cardinalities. With one, raw strings are looked up and
    unknown values map to the reserved index 0.
    """
    path = Path(path)
    fields = [schema.scenario_field_name, *schema.common_field_names]
    scenario_ids, common_ids, labels = [], [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [f for f in fields + ["label"] if f not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        cards = (schema.scenario_cardinality, *schema.common_cardinalities)
        for lineno, row in enumerate(reader, start=2):
            raw_label = (row["label"] or "").strip()
            if raw_label not in ("0", "1"):
                raise ParseError(
                    f"{path}:{lineno}: label must be 0/1, got {raw_label!r}"
                )
            ids = []
            for f, card in zip(fields, cards):
                raw = row[f]
                if vocab is not None:
                    idx = vocab.encode(f, raw)
                else:
                    try:
                        idx = int(raw)
                    except (TypeError, ValueError):
                        raise ParseError(
                            f"{path}:{lineno}: field {f!r} value {raw!r} is not "
                            "an integer index (no vocabulary supplied)"
                        ) from None
                if idx < 0 or idx >= card:
                    raise ParseError(
                        f"{path}:{lineno}: field {f!r} index {idx} outside "
                        f"cardinality {card}"
                    )
                ids.append(idx)
            scenario_ids.append(ids[0])
            common_ids.append(ids[1:])
            labels.append(int(raw_label))
    n = len(scenario_ids)
    return Dataset(
        schema,
        np.asarray(scenario_ids, dtype=np.int64).reshape(n),
        np.asarray(common_ids, dtype=np.int64).reshape(n, schema.num_common),
        np.asarray(labels, dtype=np.int64).reshape(n),
        split_tag=split_tag,
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic multi-scenario generator with planted structure.

    Labels are Bernoulli draws from sigmoid(base + per-scenario offset +
    pairwise interaction terms whose sign flips across scenarios + noise).
    """

    num_scenarios: int
    num_common_features: int
    cardinality_per_feature: int
    samples_per_split: tuple[int, int, int]
    seed: int
    explicit_strength: float = 0.0
    implicit_strength: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "samples_per_split", tuple(int(n) for n in self.samples_per_split)
        )
        if self.num_scenarios < 1 or self.num_common_features < 1:
            raise GenerationError("need >= 1 scenario and >= 1 common feature")
        if self.cardinality_per_feature < 2:
            raise GenerationError("cardinality_per_feature must be >= 2")
        if len(self.samples_per_split) != 3:
            raise GenerationError("samples_per_split must be (train, val, test)")
        if self.samples_per_split[0] <= 0:
            raise GenerationError("train split must be non-empty")
        if any(n < 0 for n in self.samples_per_split):
            raise GenerationError("split sizes must be >= 0")
        if min(self.explicit_strength, self.implicit_strength, self.noise_std) < 0:
            raise GenerationError("strengths and noise_std must be >= 0")

    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            scenario_field_name="scenario",
            common_field_names=tuple(
                f"f{i}" for i in range(self.num_common_features)
            ),
            scenario_cardinality=self.num_scenarios,
            common_cardinalities=(self.cardinality_per_feature,)
            * self.num_common_features,
        )

    def to_dict(self) -> dict:
        return {
            "num_scenarios": self.num_scenarios,
            "num_common_features": self.num_common_features,
            "cardinality_per_feature": self.cardinality_per_feature,
            "samples_per_split": list(self.samples_per_split),
            "seed": self.seed,
            "explicit_strength": self.explicit_strength,
            "implicit_strength": self.implicit_strength,
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            num_scenarios=int(d["num_scenarios"]),
            num_common_features=int(d["num_common_features"]),
            cardinality_per_feature=int(d["cardinality_per_feature"]),
            samples_per_split=tuple(d["samples_per_split"]),
            seed=int(d["seed"]),
            explicit_strength=float(d.get("explicit_strength", 0.0)),
            implicit_strength=float(d.get("implicit_strength", 0.0)),
            noise_std=float(d.get("noise_std", 0.0)),
        )


def planted_pairs(num_common_features: int) -> list[tuple[int, int]]:
    """Disjoint feature pairs carrying the planted interactions."""
    if num_common_features < 2:
        return []
    pairs = [(0, 1)]
    if num_common_features >= 4:
        pairs.append((2, 3))
    return pairs


def scenario_offsets(num_scenarios: int, strength: float) -> np.ndarray:
    """Per-scenario logit offsets, evenly spaced over [-strength, strength]."""
    if num_scenarios == 1:
        return np.zeros(1)
    return np.linspace(-strength, strength, num_scenarios)


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[Dataset, Dataset, Dataset, dict]:
    """Generate train/val/test datasets plus the planted-CTR sidecar report."""
    rng = np.random.default_rng(spec.seed)
    schema = spec.schema()
    pairs = planted_pairs(spec.num_common_features)
    card = spec.cardinality_per_feature
    # One random +/-1 table per pair; the value combination decides the sign
    # of the interaction, the scenario decides its orientation.
    tables = [
        rng.choice([-1.0, 1.0], size=(card, card)) for _ in range(len(pairs))
    ]
    offsets = scenario_offsets(spec.num_scenarios, spec.explicit_strength)

    datasets = []
    report: dict = {
        "base_ctr": float(sigmoid(np.array(SYNTHETIC_BASE_LOGIT))),
        "planted_pairs": [list(p) for p in pairs],
        "splits": {},
    }
    for tag, n in zip(("train", "val", "test"), spec.samples_per_split):
        scen = rng.integers(0, spec.num_scenarios, size=n)
        feats = rng.integers(0, card, size=(n, spec.num_common_features))
        logits = np.full(n, SYNTHETIC_BASE_LOGIT) + offsets[scen]
        for p, (i, j) in enumerate(pairs):
            # sign flips across scenarios and alternates across pairs
            sign = np.where((scen + p) % 2 == 0, 1.0, -1.0)
            logits += spec.implicit_strength * sign * tables[p][feats[:, i], feats[:, j]]
        if spec.noise_std > 0:
            logits += rng.normal(0.0, spec.noise_std, size=n)
        probs = sigmoid(logits)
        labels = (rng.random(n) < probs).astype(np.int64)
        ds = Dataset(schema, scen, feats, labels, split_tag=tag)
        datasets.append(ds)
        per_scenario = {}
        for s in range(spec.num_scenarios):
            mask = scen == s
            cnt = int(mask.sum())
            per_scenario[str(s)] = {
                "count": cnt,
                "planted_ctr": float(probs[mask].mean()) if cnt else None,
                "empirical_ctr": float(labels[mask].mean()) if cnt else None,
            }
        report["splits"][tag] = {"count": int(n), "per_scenario": per_scenario}
    return datasets[0], datasets[1], datasets[2], report


def epoch_seed(seed: int, epoch: int) -> int:
    """Derived shuffle seed: a pure function of (seed, epoch)."""
    return int(np.random.SeedSequence([seed & (2**64 - 1), 1, epoch]).generate_state(1)[0])


def make_batches(
    ds: Dataset,
    batch_size: int,
    seed: int,
    shuffle: bool = True,
    epoch: int = 0,
) -> list[Batch]:
    """Partition a dataset into batches; the last batch may be short."""
    if batch_size < 1:
        raise GenerationError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    if n == 0:
        return []
    if shuffle:
        rng = np.random.default_rng(epoch_seed(seed, epoch))
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    batches = []
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        batches.append(
            Batch(
                scenario_ids=ds.scenario_ids[idx],
                common_ids=ds.common_ids[idx],
                labels=ds.labels[idx],
            )
        )
    return batches
