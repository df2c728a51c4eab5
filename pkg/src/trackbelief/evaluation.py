"""Evaluation metrics: accuracy tables, dual confusion matrices, entropy
histograms, and misclassification records.

The confusion matrices come in pairs — counts and mean entropy per
(true, predicted) cell — and cells with zero count carry no entropy value
at all rather than a fake zero. Misclassification records include the
nearest class in the top predicted mass set and a high-uncertainty flag
for entropies above 2 bits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .beliefs import (ClassFrame, FocalSet, SetBudget,
                      nearest_class_in_top_set, prediction_from_scores)
from .netcore import BatchPrediction, Model
from .trackgen import Dataset, DataError

HIGH_UNCERTAINTY_BITS = 2.0
HISTOGRAM_BIN_WIDTH = 0.1


@dataclass
class MisclassRecord:
    sample_id: str
    true_class: str
    predicted_class: str
    nearest_in_top_set: str
    entropy_bits: float
    high_uncertainty: bool


@dataclass
class EvalReport:
    frame: ClassFrame
    n_test: int
    n_uncertain: int
    overall_accuracy: float
    per_class_accuracy: list[float]
    per_class_counts: list[int]
    confusion_counts: list[list[int]]
    confusion_mean_entropy: list[list[Optional[float]]]
    histogram_edges: list[float]
    histogram_regular: list[int]
    histogram_uncertain: list[int]
    mean_entropy_regular: float
    mean_entropy_uncertain: float
    misclassifications: list[MisclassRecord]
    meta: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "format_version": 1,
            "meta": self.meta,
            "classes": list(self.frame.names),
            "n_test": self.n_test,
            "n_uncertain": self.n_uncertain,
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "per_class_counts": self.per_class_counts,
            "confusion_counts": self.confusion_counts,
            "confusion_mean_entropy": self.confusion_mean_entropy,
            "entropy_histogram": {
                "edges": self.histogram_edges,
                "regular": self.histogram_regular,
                "uncertain": self.histogram_uncertain,
            },
            "mean_entropy_regular": self.mean_entropy_regular,
            "mean_entropy_uncertain": self.mean_entropy_uncertain,
            "misclassifications": [
                {"sample_id": r.sample_id, "true_class": r.true_class,
                 "predicted_class": r.predicted_class,
                 "nearest_in_top_set": r.nearest_in_top_set,
                 "entropy_bits": r.entropy_bits,
                 "high_uncertainty": r.high_uncertainty}
                for r in self.misclassifications
            ],
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, sort_keys=True, indent=2)


def _histogram_edges(frame: ClassFrame) -> np.ndarray:
    top = math.ceil(frame.max_entropy_bits / HISTOGRAM_BIN_WIDTH) * HISTOGRAM_BIN_WIDTH
    n_bins = int(round(top / HISTOGRAM_BIN_WIDTH))
    return np.round(np.linspace(0.0, top, n_bins + 1), 9)


def _nearest_for(pred_batch: BatchPrediction, i: int, true_cls: int,
                 model: Model) -> str:
    frame = model.frame
    if model.kind == "rsnn":
        pred = prediction_from_scores(pred_batch.scores[i], model.budget)
        return frame.names[nearest_class_in_top_set(pred, true_cls)]
    # The softmax head has no set structure; its top "set" is the argmax.
    return frame.names[int(pred_batch.classes[i])]


def evaluate(model: Model, dataset: Dataset,
             meta: Optional[dict] = None) -> EvalReport:
    """Full report for a model over the dataset's test and uncertain splits.

    The uncertain split is never part of training by construction; its
    entropies populate the hatched histogram and the uncertain mean.
    """
    frame = model.frame
    if frame.size != dataset.frame.size:
        raise DataError("model and dataset class modes differ")
    X_test, y_test = dataset.split_arrays("test")
    if len(X_test) == 0:
        raise DataError("dataset has no test split")
    test_ids = [dataset.ids[i] for i in dataset.indices("test")]

    pred = model.predict_batch(X_test)
    n = frame.size
    counts = np.zeros((n, n), dtype=int)
    ent_sums = np.zeros((n, n))
    for true_cls, pred_cls, ent in zip(y_test, pred.classes, pred.entropies):
        counts[true_cls, pred_cls] += 1
        ent_sums[true_cls, pred_cls] += ent
    mean_entropy: list[list[Optional[float]]] = [
        [float(ent_sums[i, j] / counts[i, j]) if counts[i, j] else None
         for j in range(n)]
        for i in range(n)
    ]

    per_class_acc, per_class_counts = [], []
    for cls in range(n):
        mask = y_test == cls
        per_class_counts.append(int(mask.sum()))
        per_class_acc.append(float((pred.classes[mask] == cls).mean())
                             if mask.any() else 0.0)

    records: list[MisclassRecord] = []
    for i, (true_cls, pred_cls) in enumerate(zip(y_test, pred.classes)):
        if true_cls == pred_cls:
            continue
        ent = float(pred.entropies[i])
        records.append(MisclassRecord(
            sample_id=test_ids[i],
            true_class=frame.names[true_cls],
            predicted_class=frame.names[int(pred_cls)],
            nearest_in_top_set=_nearest_for(pred, i, int(true_cls), model),
            entropy_bits=ent,
            high_uncertainty=ent > HIGH_UNCERTAINTY_BITS,
        ))

    unc_idx = dataset.indices("uncertain")
    edges = _histogram_edges(frame)
    if len(unc_idx):
        unc_pred = model.predict_batch(dataset.X[unc_idx])
        unc_entropies = unc_pred.entropies
    else:
        unc_entropies = np.array([])
    hist_reg, _ = np.histogram(pred.entropies, bins=edges)
    hist_unc, _ = np.histogram(unc_entropies, bins=edges)

    return EvalReport(
        frame=frame,
        n_test=len(y_test),
        n_uncertain=len(unc_idx),
        overall_accuracy=float((pred.classes == y_test).mean()),
        per_class_accuracy=per_class_acc,
        per_class_counts=per_class_counts,
        confusion_counts=counts.tolist(),
        confusion_mean_entropy=mean_entropy,
        histogram_edges=[float(e) for e in edges],
        histogram_regular=hist_reg.tolist(),
        histogram_uncertain=hist_unc.tolist(),
        mean_entropy_regular=float(pred.entropies.mean()),
        mean_entropy_uncertain=float(unc_entropies.mean())
        if len(unc_entropies) else 0.0,
        misclassifications=records,
        meta=dict(meta or {}),
    )


def misclassification_analysis(report: EvalReport,
                               svg_path: Optional[str | Path] = None
                               ) -> list[MisclassRecord]:
    """Misclassification records, optionally rendered as the scatter SVG."""
    if svg_path is not None:
        from .svgplot import plot_misclassifications
        plot_misclassifications(report.misclassifications, report.frame, svg_path)
    return report.misclassifications


@dataclass
class SeedAggregate:
    """Accuracy mean and spread over several training seeds."""

    n_seeds: int
    mean_accuracy: float
    std_accuracy: float
    per_seed: list[float]
    mean_entropy_regular: float
    mean_entropy_uncertain: float

    def to_json_obj(self) -> dict:
        return {
            "n_seeds": self.n_seeds,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "per_seed": self.per_seed,
            "mean_entropy_regular": self.mean_entropy_regular,
            "mean_entropy_uncertain": self.mean_entropy_uncertain,
        }


def aggregate_reports(reports: list[EvalReport]) -> SeedAggregate:
    """Mean +/- sample std of accuracy over per-seed reports."""
    if not reports:
        raise DataError("no reports to aggregate")
    accs = [r.overall_accuracy for r in reports]
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return SeedAggregate(
        n_seeds=len(reports),
        mean_accuracy=float(np.mean(accs)),
        std_accuracy=std,
        per_seed=accs,
        mean_entropy_regular=float(np.mean([r.mean_entropy_regular for r in reports])),
        mean_entropy_uncertain=float(np.mean([r.mean_entropy_uncertain for r in reports])),
    )


def within_vs_across_direction_mass(report: EvalReport) -> tuple[int, int]:
    """Misclassification counts within a direction vs across directions.

    Straight rows/columns are excluded on both sides; the paper analog is
    within-group confusion (Left-Easy <-> Left-Medium) dominating
    cross-direction confusion.
    """
    within = across = 0
    names = report.frame.names
    for i, row in enumerate(report.confusion_counts):
        for j, count in enumerate(row):
            if i == j:
                continue
            side_i, side_j = names[i].split("-")[0], names[j].split("-")[0]
            if side_i == "Straight" or side_j == "Straight":
                continue
            if side_i == side_j:
                within += count
            else:
                across += count
    return within, across
