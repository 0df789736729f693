"""Synthetic Gaussian classification worlds for desk-scale runs.

Classes live on pairwise unit-separated means in embedding space with
isotropic Gaussian noise, so ground truth is known, class geometry is
symmetric, and the whole pipeline can be exercised end to end without any
external encoder or model.
"""

from __future__ import annotations

import numpy as np

from .dataset import Example, LabeledDataset


def class_means(num_classes: int, dim: int) -> np.ndarray:
    """Pairwise unit-separated class means: scaled standard basis vectors."""
    if dim < num_classes:
        raise ValueError(f"dimension {dim} too small for {num_classes} separated classes")
    means = np.zeros((num_classes, dim))
    for j in range(num_classes):
        means[j, j] = 1.0 / np.sqrt(2.0)  # ||m_i - m_j|| = 1 for i != j
    return means


def gaussian_world(
    num_classes: int = 4,
    per_class: int = 500,
    dim: int = 8,
    noise: float = 0.3,
    seed: int = 0,
    id_prefix: str = "w",
) -> LabeledDataset:
    """Balanced dataset of noisy samples around the class means.

    Labels are class indices; embeddings are the raw sample coordinates.
    Examples interleave classes in a fixed round-robin order so class
    position carries no information.
    """
    rng = np.random.default_rng(seed)
    means = class_means(num_classes, dim)
    examples = []
    for i in range(per_class):
        for j in range(num_classes):
            vector = means[j] + noise * rng.standard_normal(dim)
            examples.append(
                Example(
                    id=f"{id_prefix}-{j}-{i:05d}",
                    text=f"{id_prefix} sample {i} of group {j}",
                    label=j,
                    embedding=vector,
                )
            )
    return LabeledDataset(examples, label_space=tuple(range(num_classes)))
