"""Evaluation: AUC, Logloss, relative improvement, per-scenario reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import MetricError
from .nn.functional import bce_loss


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outranks a random negative, ties at 0.5.

    Rank-sum formulation; equals the exhaustive pairwise count exactly.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError(
            f"AUC undefined: {n_pos} positive / {n_neg} negative labels"
        )
    ranks = rankdata(scores, method="average")
    # 2*rank is integral, so the sums below are exact in float64.
    u2 = 2.0 * np.sum(ranks[labels == 1]) - n_pos * (n_pos + 1.0)
    return float(u2 / (2.0 * n_pos * n_neg))


def logloss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy; same definition as the training loss."""
    return bce_loss(scores, labels)


def relaimpr(model_auc: float, baseline_auc: float) -> float:
    """Relative improvement of AUC over a baseline, in percent."""
    if baseline_auc <= 0.5:
        raise MetricError(
            f"relative improvement undefined for baseline AUC {baseline_auc} <= 0.5"
        )
    if model_auc < 0.0:
        raise MetricError("model AUC must be >= 0")
    return ((model_auc - 0.5) / (baseline_auc - 0.5) - 1.0) * 100.0


@dataclass
class ScenarioMetrics:
    auc: float | None
    logloss: float
    count: int


@dataclass
class EvalReport:
    overall_auc: float
    overall_logloss: float
    per_scenario: dict[int, ScenarioMetrics]
    relaimpr_vs_baseline: float | None = None

    def to_dict(self) -> dict:
        return {
            "overall_auc": self.overall_auc,
            "overall_logloss": self.overall_logloss,
            "per_scenario": {
                str(s): {"auc": m.auc, "logloss": m.logloss, "count": m.count}
                for s, m in self.per_scenario.items()
            },
            "relaimpr_vs_baseline": self.relaimpr_vs_baseline,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Aligned per-scenario/overall table."""
        rows = [("scenario", "count", "auc", "logloss")]
        for s in sorted(self.per_scenario):
            m = self.per_scenario[s]
            auc_s = f"{m.auc:.4f}" if m.auc is not None else "undef"
            rows.append((f"sce_{s}", str(m.count), auc_s, f"{m.logloss:.4f}"))
        total = sum(m.count for m in self.per_scenario.values())
        rows.append(
            ("overall", str(total), f"{self.overall_auc:.4f}", f"{self.overall_logloss:.4f}")
        )
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        if self.relaimpr_vs_baseline is not None:
            lines.append(f"relative improvement vs baseline: {self.relaimpr_vs_baseline:.2f}%")
        return "\n".join(lines)


def evaluate(model, ds: Dataset, baseline_auc: float | None = None) -> EvalReport:
    """Score a frozen model on a dataset, grouped by explicit scenario."""
    if len(ds) == 0:
        raise MetricError("cannot evaluate an empty dataset")
    scores = model.predict_scores(ds)
    labels = ds.labels
    per_scenario: dict[int, ScenarioMetrics] = {}
    for s in np.unique(ds.scenario_ids):
        mask = ds.scenario_ids == s
        group_scores, group_labels = scores[mask], labels[mask]
        try:
            group_auc = auc(group_scores, group_labels)
        except MetricError:
            group_auc = None
        per_scenario[int(s)] = ScenarioMetrics(
            auc=group_auc,
            logloss=logloss(group_scores, group_labels),
            count=int(mask.sum()),
        )
    overall = auc(scores, labels)
    report = EvalReport(
        overall_auc=overall,
        overall_logloss=logloss(scores, labels),
        per_scenario=per_scenario,
    )
    if baseline_auc is not None:
        report.relaimpr_vs_baseline = relaimpr(overall, baseline_auc)
    return report
