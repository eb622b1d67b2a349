"""Accuracy and demographic-parity risk difference, plus report shaping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import EncodedDataset
from .model import predict_labels

FAIRNESS_THRESHOLD = 0.05

REPORT_COLUMNS = ("train_accuracy", "test_accuracy", "train_rd", "test_rd")


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches between two 0/1 vectors."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError("predictions and labels must be equal-length vectors")
    if predictions.size == 0:
        raise ValueError("cannot compute accuracy of an empty vector")
    return float(np.mean(predictions == labels))


def risk_difference(predictions, protected) -> float:
    """|P(pred=1 | a=1) - P(pred=1 | a=0)|, the demographic-parity gap."""
    predictions = np.asarray(predictions)
    protected = np.asarray(protected)
    if predictions.shape != protected.shape or predictions.ndim != 1:
        raise ValueError("predictions and protected must be equal-length vectors")
    rates = []
    for group in (1, 0):
        mask = protected == group
        if not mask.any():
            raise ValueError(f"protected group a={group} is empty")
        rates.append(np.mean(predictions[mask] == 1))
    return float(abs(rates[0] - rates[1]))


def weighted_risk_difference(predictions, protected, v) -> float:
    """Risk difference with each sample contributing its weight v_i.

    Reduces exactly to :func:`risk_difference` at v = 1 and is invariant
    under positive rescaling of v.
    """
    predictions = np.asarray(predictions)
    protected = np.asarray(protected)
    v = np.asarray(v, dtype=np.float64)
    if not (predictions.shape == protected.shape == v.shape):
        raise ValueError("predictions, protected and v must share one length")
    if (v <= 0).any():
        raise ValueError("weights must be positive")
    rates = []
    for group in (1, 0):
        mask = protected == group
        total = v[mask].sum()
        if total <= 0:
            raise ValueError(f"protected group a={group} has zero total weight")
        rates.append(v[mask & (predictions == 1)].sum() / total)
    return float(abs(rates[0] - rates[1]))


@dataclass
class MetricsReport:
    """Accuracy and risk difference on the train/test splits of one fit."""

    train_accuracy: float
    test_accuracy: float
    train_rd: float
    test_rd: float
    weighted_train_rd: float = None
    method: str = ""
    hyperparameters: dict = field(default_factory=dict)
    repetitions: int = 1
    aggregation: str = "mean"
    fairness_threshold: float = FAIRNESS_THRESHOLD

    def __post_init__(self):
        for name in REPORT_COLUMNS:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")

    @property
    def train_fair(self) -> bool:
        return self.train_rd <= self.fairness_threshold

    @property
    def test_fair(self) -> bool:
        return self.test_rd <= self.fairness_threshold

    def to_dict(self) -> dict:
        return {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "train_rd": self.train_rd,
            "test_rd": self.test_rd,
            "weighted_train_rd": self.weighted_train_rd,
            "method": self.method,
            "hyperparameters": self.hyperparameters,
            "repetitions": self.repetitions,
            "aggregation": self.aggregation,
            "fairness_threshold": self.fairness_threshold,
            "train_fair": self.train_fair,
            "test_fair": self.test_fair,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            train_accuracy=d["train_accuracy"],
            test_accuracy=d["test_accuracy"],
            train_rd=d["train_rd"],
            test_rd=d["test_rd"],
            weighted_train_rd=d.get("weighted_train_rd"),
            method=d.get("method", ""),
            hyperparameters=d.get("hyperparameters", {}),
            repetitions=d.get("repetitions", 1),
            aggregation=d.get("aggregation", "mean"),
            fairness_threshold=d.get("fairness_threshold", FAIRNESS_THRESHOLD),
        )


def evaluate(
    result,
    train: EncodedDataset,
    test: EncodedDataset,
    method: str = "",
    hyperparameters: dict = None,
    fairness_threshold: float = FAIRNESS_THRESHOLD,
) -> MetricsReport:
    """Score one train result on its train and test splits."""
    train_pred = predict_labels(result.params, train)
    test_pred = predict_labels(result.params, test)
    return MetricsReport(
        train_accuracy=accuracy(train_pred, train.labels),
        test_accuracy=accuracy(test_pred, test.labels),
        train_rd=risk_difference(train_pred, train.protected),
        test_rd=risk_difference(test_pred, test.protected),
        weighted_train_rd=weighted_risk_difference(
            train_pred, train.protected, result.weights
        ),
        method=method,
        hyperparameters=dict(hyperparameters or {}),
        fairness_threshold=fairness_threshold,
    )


def aggregate_reports(reports) -> MetricsReport:
    """Arithmetic mean of repeated runs of one method."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    first = reports[0]
    mean = lambda name: float(np.mean([getattr(r, name) for r in reports]))
    weighted = [r.weighted_train_rd for r in reports]
    return MetricsReport(
        train_accuracy=mean("train_accuracy"),
        test_accuracy=mean("test_accuracy"),
        train_rd=mean("train_rd"),
        test_rd=mean("test_rd"),
        weighted_train_rd=(
            float(np.mean(weighted)) if all(w is not None for w in weighted) else None
        ),
        method=first.method,
        hyperparameters=first.hyperparameters,
        repetitions=len(reports),
        aggregation="mean",
        fairness_threshold=first.fairness_threshold,
    )


def format_table(reports) -> str:
    """Aligned text table, one row per method."""
    headers = ["Method", "Training Acc", "Test Acc", "Training RD", "Test RD", "Fair(test)"]
    rows = []
    for r in reports:
        rows.append(
            [
                r.method or "?",
                f"{r.train_accuracy:.4f}",
                f"{r.test_accuracy:.4f}",
                f"{r.train_rd:.4f}",
                f"{r.test_rd:.4f}",
                "yes" if r.test_fair else "no",
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)
