"""Annotated datasets: construction, imbalance synthesis, and partitioning.

A :class:`LabeledDataset` is an immutable collection of examples with a class
index built over its label space.  All sampling operations are pure functions
of their seed and return new datasets, so datasets can be shared freely
across threads.

The on-disk format is line-delimited JSON, one record per line with fields
``id`` (string), ``text`` (string), ``label`` (string or integer) and an
optional ``embedding`` (array of numbers).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateId,
    EmptyClass,
    InsufficientSource,
    InvalidSize,
    InvalidSpec,
    LabelOutOfRange,
    SubsetTooLarge,
)

Label = Union[int, str]

PROFILES = ("exponential", "step")


@dataclass(frozen=True)
class Example:
    """One annotated item: an input text, its label, and an optional embedding.

    The label is a class index for classification tasks or a reference output
    string for generation tasks.  Embeddings are treated as read-only once
    attached.
    """

    id: str
    text: str
    label: Label
    embedding: np.ndarray | None = None

    def with_embedding(self, vector: np.ndarray) -> "Example":
        return Example(self.id, self.text, self.label, np.asarray(vector, dtype=np.float64))


class LabeledDataset:
    """Immutable ordered collection of examples with a per-class index.

    The label space is either given explicitly or inferred: when every label
    is an integer the space is ``0..max(label)`` (class-index semantics,
    possibly with empty classes); otherwise it is the distinct labels in
    order of first appearance.
    """

    def __init__(self, examples: Iterable[Example], label_space: Sequence[Label] | None = None):
        self._examples: tuple[Example, ...] = tuple(examples)

        seen: set[str] = set()
        for ex in self._examples:
            if ex.id in seen:
                raise DuplicateId(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

        if label_space is not None:
            space = tuple(label_space)
        elif self._examples and all(isinstance(ex.label, (int, np.integer)) for ex in self._examples):
            space = tuple(range(int(max(ex.label for ex in self._examples)) + 1))
        else:
            ordered: dict[Label, None] = {}
            for ex in self._examples:
                ordered.setdefault(ex.label, None)
            space = tuple(ordered)
        self._label_space = space
        self._label_to_index = {label: j for j, label in enumerate(space)}
        if len(self._label_to_index) != len(space):
            raise DataError("label space contains duplicates")

        counts = [0] * len(space)
        indices = np.empty(len(self._examples), dtype=np.int64)
        for i, ex in enumerate(self._examples):
            j = self._label_to_index.get(ex.label)
            if j is None:
                raise LabelOutOfRange(f"label {ex.label!r} of example {ex.id!r} not in label space")
            counts[j] += 1
            indices[i] = j
        self._counts = tuple(counts)
        self._class_indices = indices
        self._class_indices.flags.writeable = False

        self._dimension: int | None = None
        for ex in self._examples:
            if ex.embedding is None:
                continue
            vec = np.asarray(ex.embedding)
            if vec.ndim != 1:
                raise DimensionMismatch(f"embedding of {ex.id!r} is not a vector")
            if self._dimension is None:
                self._dimension = int(vec.shape[0])
            elif vec.shape[0] != self._dimension:
                raise DimensionMismatch(
                    f"embedding of {ex.id!r} has dimension {vec.shape[0]}, expected {self._dimension}"
                )

    # -- basic accessors ----------------------------------------------------

    @property
    def examples(self) -> tuple[Example, ...]:
        return self._examples

    @property
    def label_space(self) -> tuple[Label, ...]:
        return self._label_space

    @property
    def num_classes(self) -> int:
        return len(self._label_space)

    @property
    def counts(self) -> tuple[int, ...]:
        """Per-class sizes, aligned with :attr:`label_space`."""
        return self._counts

    @property
    def dimension(self) -> int | None:
        """Embedding dimension, or None when no example is embedded."""
        return self._dimension

    def __len__(self) -> int:
        return len(self._examples)

    def __iter__(self):
        return iter(self._examples)

    def class_index(self, label: Label) -> int:
        try:
            return self._label_to_index[label]
        except KeyError:
            raise LabelOutOfRange(f"label {label!r} not in label space") from None

    @property
    def class_indices(self) -> np.ndarray:
        """Class index of each example, in dataset order."""
        return self._class_indices

    def by_class(self, class_index: int) -> tuple[Example, ...]:
        if not 0 <= class_index < self.num_classes:
            raise LabelOutOfRange(f"class index {class_index} out of range")
        return tuple(ex for ex, j in zip(self._examples, self._class_indices) if j == class_index)

    def embedding_matrix(self) -> np.ndarray:
        """All embeddings stacked in dataset order; requires every example embedded."""
        rows = []
        for ex in self._examples:
            if ex.embedding is None:
                raise DataError(f"example {ex.id!r} has no embedding")
            rows.append(np.asarray(ex.embedding, dtype=np.float64))
        return np.vstack(rows) if rows else np.empty((0, 0))

    def replace_examples(self, examples: Iterable[Example]) -> "LabeledDataset":
        """New dataset over the same label space."""
        return LabeledDataset(examples, label_space=self._label_space)


@dataclass(frozen=True)
class ImbalanceSpec:
    """Target shape for a synthetic long-tailed dataset.

    ``ratio`` is the max/min class count quotient; ``head_count`` is the size
    of the largest class.  ``profile`` is ``exponential`` (smooth long tail)
    or ``step`` (half head classes at ``head_count``, half tail classes at
    ``head_count/ratio``).  Head-to-tail order follows ascending class index
    unless ``permute_head_order`` draws a seeded permutation.
    """

    ratio: float
    head_count: int
    profile: str = "exponential"
    seed: int = 0
    permute_head_order: bool = False

    def __post_init__(self):
        if self.ratio < 1.0:
            raise InvalidSpec(f"imbalance ratio must be >= 1, got {self.ratio}")
        if self.head_count < self.ratio:
            raise InvalidSpec(
                f"head_count {self.head_count} below ratio {self.ratio}; smallest class would round to zero"
            )
        if self.profile not in PROFILES:
            raise InvalidSpec(f"unknown profile {self.profile!r}; expected one of {PROFILES}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def imbalance_ratio(ds: LabeledDataset) -> float:
    """Max class count divided by min class count."""
    if ds.num_classes == 0:
        raise EmptyClass("dataset has no classes")
    if min(ds.counts) == 0:
        empty = [ds.label_space[j] for j, c in enumerate(ds.counts) if c == 0]
        raise EmptyClass(f"classes with zero examples: {empty}")
    return max(ds.counts) / min(ds.counts)


def target_counts(spec: ImbalanceSpec, num_classes: int) -> list[int]:
    """Per-class sizes for the given profile, head position first.

    Exponential: position ``j`` gets ``head_count * ratio**(-j/(k-1))``.
    Step: the first ``k // 2`` positions get ``head_count``, the rest
    ``head_count / ratio``.  Counts are rounded half-up and clamped to >= 1.
    """
    k = num_classes
    if k < 1:
        raise InvalidSpec("need at least one class")
    if k == 1:
        return [spec.head_count]
    counts = []
    for j in range(k):
        if spec.profile == "exponential":
            raw = spec.head_count * spec.ratio ** (-j / (k - 1))
        else:
            n_head = max(k // 2, 1)
            raw = spec.head_count if j < n_head else spec.head_count / spec.ratio
        counts.append(max(_round_half_up(raw), 1))
    return counts


def make_imbalanced(source: LabeledDataset, spec: ImbalanceSpec) -> LabeledDataset:
    """Subsample ``source`` into a long-tailed dataset at the target ratio.

    Classes are assigned head-to-tail positions (ascending class index, or a
    seeded permutation), then each class is down-sampled uniformly without
    replacement to its profile count.  The achieved ratio is within rounding
    of ``spec.ratio``.
    """
    k = source.num_classes
    counts_by_position = target_counts(spec, k)

    rng = np.random.default_rng(spec.seed)
    if spec.permute_head_order:
        order = rng.permutation(k)
    else:
        order = np.arange(k)
    targets = [0] * k
    for position, class_index in enumerate(order):
        targets[class_index] = counts_by_position[position]

    for j, need in enumerate(targets):
        have = source.counts[j]
        if have < need:
            raise InsufficientSource(
                f"class {source.label_space[j]!r} has {have} examples, needs {need}"
            )

    keep_positions: list[int] = []
    positions_by_class: list[np.ndarray] = [
        np.flatnonzero(source.class_indices == j) for j in range(k)
    ]
    for j in range(k):
        chosen = rng.choice(positions_by_class[j], size=targets[j], replace=False)
        keep_positions.extend(int(p) for p in chosen)
    keep_positions.sort()
    kept = [source.examples[p] for p in keep_positions]
    return source.replace_examples(kept)


def balanced_subset(
    ds: LabeledDataset, total_size: int, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Split off a class-balanced subset, keeping the remainder imbalanced.

    Draws ``total_size // k`` examples per class uniformly without
    replacement.  Returns ``(subset, remainder)``; together they partition
    the input.  The per-class draw must stay strictly below the smallest
    class so the remainder retains every class.
    """
    k = ds.num_classes
    if k == 0:
        raise EmptyClass("dataset has no classes")
    per_class = total_size // k
    if per_class < 1:
        raise InvalidSize(f"total size {total_size} gives {per_class} per class across {k} classes")
    smallest = min(ds.counts)
    if per_class >= smallest:
        raise SubsetTooLarge(
            f"{per_class} per class requested but smallest class has {smallest} examples"
        )

    rng = np.random.default_rng(seed)
    subset_positions: set[int] = set()
    for j in range(k):
        positions = np.flatnonzero(ds.class_indices == j)
        chosen = rng.choice(positions, size=per_class, replace=False)
        subset_positions.update(int(p) for p in chosen)

    subset = [ex for p, ex in enumerate(ds.examples) if p in subset_positions]
    remainder = [ex for p, ex in enumerate(ds.examples) if p not in subset_positions]
    return ds.replace_examples(subset), ds.replace_examples(remainder)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_dataset(path: str, label_space: Sequence[Label] | None = None) -> LabeledDataset:
    """Read a line-delimited dataset file, validating ids and embeddings.

    Raises :class:`DataError` with the offending line number on parse
    failures, duplicate ids, or inconsistent embedding dimensions.
    """
    examples: list[Example] = []
    seen: set[str] = set()
    dimension: int | None = None
    try:
        handle = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                ex_id = str(record["id"])
                text = str(record["text"])
                label = record["label"]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from None
            if not isinstance(label, (int, str)):
                raise DataError(f"{path}:{lineno}: label must be string or integer")
            if ex_id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate id {ex_id!r}")
            seen.add(ex_id)
            embedding = None
            if record.get("embedding") is not None:
                embedding = np.asarray(record["embedding"], dtype=np.float64)
                if embedding.ndim != 1:
                    raise DimensionMismatch(f"{path}:{lineno}: embedding is not a flat array")
                if dimension is None:
                    dimension = int(embedding.shape[0])
                elif embedding.shape[0] != dimension:
                    raise DimensionMismatch(
                        f"{path}:{lineno}: embedding dimension {embedding.shape[0]} != {dimension}"
                    )
            examples.append(Example(ex_id, text, label, embedding))
    return LabeledDataset(examples, label_space=label_space)


def save_dataset(ds: LabeledDataset, path: str) -> None:
    """Write the dataset in the line-delimited format read by :func:`load_dataset`."""
    with open(path, "w", encoding="utf-8") as handle:
        for ex in ds.examples:
            record: dict = {"id": ex.id, "text": ex.text, "label": ex.label}
            if ex.embedding is not None:
                record["embedding"] = [float(v) for v in np.asarray(ex.embedding)]
            handle.write(json.dumps(record, sort_keys=True) + "\n")
