"""Experiment metrics and distribution-shift diagnostics.

Covers overall and per-class accuracy, macro-F1, normalized exact match,
mean/std aggregation across seeds, and a per-class KL divergence between
the annotated and test conditional feature distributions, estimated from
seeded k-means cluster histograms over shared embeddings.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .dataset import LabeledDataset
from .errors import (
    DegenerateClustering,
    DimensionMismatch,
    LabelOutOfRange,
    LengthMismatch,
    MissingClass,
)

_ARTICLE_PATTERN = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass
class EvalReport:
    """Metrics of one run plus the metadata needed to reproduce it."""

    overall_accuracy: float
    per_class_accuracy: list[float]
    macro_f1: float
    em: float | None = None
    kl_per_class: list[float] | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "macro_f1": self.macro_f1,
            "em": self.em,
            "kl_per_class": self.kl_per_class,
            "metadata": self.metadata,
        }


def classification_metrics(predictions, references, num_classes: int) -> EvalReport:
    """Accuracy, per-class accuracy (recall), and macro-F1.

    Per-class F1 is ``2PR / (P + R)`` with the convention that a class with
    no predicted and no actual positives scores 0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    references = np.asarray(references, dtype=np.int64)
    if predictions.shape != references.shape or predictions.ndim != 1:
        raise LengthMismatch(
            f"got {predictions.shape} predictions and {references.shape} references"
        )
    if predictions.size == 0:
        raise LengthMismatch("need at least one prediction")
    for name, arr in (("prediction", predictions), ("reference", references)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise LabelOutOfRange(f"{name} labels outside 0..{num_classes - 1}")

    correct = predictions == references
    per_class = []
    f1s = []
    for j in range(num_classes):
        actual = references == j
        predicted = predictions == j
        tp = float(np.sum(actual & predicted))
        per_class.append(float(correct[actual].mean()) if actual.any() else 0.0)
        p = tp / predicted.sum() if predicted.any() else 0.0
        r = tp / actual.sum() if actual.any() else 0.0
        f1s.append(2.0 * p * r / (p + r) if (p + r) > 0 else 0.0)

    return EvalReport(
        overall_accuracy=float(correct.mean()),
        per_class_accuracy=per_class,
        macro_f1=float(np.mean(f1s)),
    )


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop English articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_PATTERN.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, reference: str) -> int:
    """1 iff the normalized strings are equal."""
    return int(normalize_answer(prediction) == normalize_answer(reference))


def kl_conditional_diagnostic(
    annotated: LabeledDataset,
    test: LabeledDataset,
    clusters: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """Per-class KL divergence of annotated vs test conditional distributions.

    Embeddings of the test set are clustered (seeded k-means); each class's
    members in either dataset are histogrammed over cluster assignments with
    add-one smoothing, and ``KL(annotated_class || test_class)`` is returned
    per class.  Nonzero values indicate within-class feature shift between
    the pools.
    """
    if annotated.dimension is None or test.dimension is None:
        raise DimensionMismatch("both datasets must be embedded")
    if annotated.dimension != test.dimension:
        raise DimensionMismatch(
            f"embedding dimensions differ: {annotated.dimension} vs {test.dimension}"
        )
    if clusters < 1:
        raise DegenerateClustering("need at least one cluster")
    if clusters > len(test):
        raise DegenerateClustering(f"{clusters} clusters requested for {len(test)} test points")
    if annotated.num_classes != test.num_classes:
        raise MissingClass("datasets disagree on the number of classes")
    for j in range(annotated.num_classes):
        if annotated.counts[j] == 0 or test.counts[j] == 0:
            raise MissingClass(f"class {annotated.label_space[j]!r} absent from one dataset")

    test_matrix = test.embedding_matrix()
    annotated_matrix = annotated.embedding_matrix()
    model = KMeans(n_clusters=clusters, random_state=seed, n_init=10)
    model.fit(test_matrix)
    test_assign = model.predict(test_matrix)
    annotated_assign = model.predict(annotated_matrix)

    divergences = np.zeros(annotated.num_classes)
    for j in range(annotated.num_classes):
        hist_a = np.bincount(
            annotated_assign[annotated.class_indices == j], minlength=clusters
        ).astype(np.float64) + 1.0
        hist_t = np.bincount(
            test_assign[test.class_indices == j], minlength=clusters
        ).astype(np.float64) + 1.0
        p = hist_a / hist_a.sum()
        q = hist_t / hist_t.sum()
        divergences[j] = float(np.sum(p * np.log(p / q)))
    return divergences


def mean_std(values) -> tuple[float, float]:
    """Mean and unbiased (n - 1) standard deviation; std is 0 for one value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise LengthMismatch("cannot aggregate zero values")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
