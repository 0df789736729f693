"""Class-weight vectors and the two-component weight decomposition.

The selection score multiplier for a candidate of class ``j`` is
``w_j + beta_j``: a class weight capturing the prior shift between the
annotated pool and the (balanced) test distribution, plus a conditional
bias capturing within-class feature shift.  This module computes the
weight schemes and verifies the exact decomposition

    P_t(x, y) / P_c(x, y) = w_y + beta_{x,y}

with ``w_y = P_t(y)/P_c(y)`` and
``beta_{x,y} = w_y * (P_t(x|y)/P_c(x|y) - 1)``, which holds identically
for any pair of discrete joints with shared support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCounts, NonPositiveWeight, SupportMismatch

SCHEMES = ("effective_number", "inverse_frequency", "literal_frequency", "uniform")


@dataclass(frozen=True)
class ClassWeightVector:
    """Per-class weights; all values strictly positive and finite."""

    values: tuple[float, ...]
    scheme: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size == 0:
            raise InvalidCounts("weight vector is empty")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise NonPositiveWeight(f"weights must be strictly positive and finite, got {self.values}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @property
    def num_classes(self) -> int:
        return len(self.values)

    def normalized_mean_one(self) -> "ClassWeightVector":
        """Same direction, rescaled so the class-mean weight is 1."""
        arr = self.as_array()
        return ClassWeightVector(tuple(arr / arr.mean()), self.scheme)


@dataclass(frozen=True)
class BiasVector:
    """Per-class conditional-bias values constrained to a search box."""

    values: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if not (values.shape == lower.shape == upper.shape):
            raise SupportMismatch("bias values and bounds have different lengths")
        if np.any(lower >= upper):
            raise NonPositiveWeight("each bias bound must satisfy lower < upper")
        if np.any(values < lower) or np.any(values > upper):
            raise NonPositiveWeight("bias values outside their bounds")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def zero(cls, num_classes: int, half_width: float = 1.0) -> "BiasVector":
        return cls(
            values=(0.0,) * num_classes,
            lower=(-half_width,) * num_classes,
            upper=(half_width,) * num_classes,
        )


def _validate_counts(counts) -> np.ndarray:
    arr = np.asarray(counts, dtype=np.int64)
    if arr.size == 0:
        raise InvalidCounts("counts vector is empty")
    if np.any(arr < 1):
        raise InvalidCounts(f"every class needs at least one example, got {list(counts)}")
    return arr


def effective_number_weights(counts) -> ClassWeightVector:
    """Weights ``(1 - a) / (1 - a**n_j)`` with ``a = (N - 1) / N``.

    Strictly decreasing in the class count, so tail classes receive the
    largest weights; a singleton class gets weight exactly 1.
    """
    arr = _validate_counts(counts)
    total = int(arr.sum())
    if total < 2:
        raise InvalidCounts("need at least two examples overall")
    alpha = (total - 1) / total
    values = (1.0 - alpha) / (1.0 - alpha ** arr.astype(np.float64))
    return ClassWeightVector(tuple(float(v) for v in values), "effective_number")


def frequency_weights(counts, inverse: bool = False) -> ClassWeightVector:
    """Raw class frequencies ``n_j / N``, or their inverse ``N / (k * n_j)``.

    The inverse form is scaled so the per-example mean weight is 1 and ranks
    tail classes highest, matching the direction of effective numbers; the
    raw form weights head classes higher.
    """
    arr = _validate_counts(counts)
    total = float(arr.sum())
    if inverse:
        values = total / (len(arr) * arr.astype(np.float64))
        scheme = "inverse_frequency"
    else:
        values = arr.astype(np.float64) / total
        scheme = "literal_frequency"
    return ClassWeightVector(tuple(float(v) for v in values), scheme)


def uniform_weights(num_classes: int) -> ClassWeightVector:
    return ClassWeightVector((1.0,) * num_classes, "uniform")


def compute_weights(scheme: str, counts) -> ClassWeightVector:
    """Dispatch on scheme name; see :data:`SCHEMES`."""
    if scheme == "effective_number":
        return effective_number_weights(counts)
    if scheme == "inverse_frequency":
        return frequency_weights(counts, inverse=True)
    if scheme == "literal_frequency":
        return frequency_weights(counts, inverse=False)
    if scheme == "uniform":
        return uniform_weights(len(tuple(counts)))
    raise InvalidCounts(f"unknown weight scheme {scheme!r}; expected one of {SCHEMES}")


def combined_weights(w: ClassWeightVector, beta: BiasVector | np.ndarray | None) -> np.ndarray:
    """The per-class score multiplier ``w + beta``; must be strictly positive."""
    total = w.as_array().copy()
    if beta is not None:
        beta_arr = beta.as_array() if isinstance(beta, BiasVector) else np.asarray(beta, dtype=np.float64)
        if beta_arr.shape != total.shape:
            raise SupportMismatch(
                f"bias has {beta_arr.shape[0]} classes, weights have {total.shape[0]}"
            )
        total = total + beta_arr
    if np.any(total <= 0.0) or not np.all(np.isfinite(total)):
        raise NonPositiveWeight(f"combined weight w + beta must be strictly positive, got {total}")
    return total


def decomposition_check(p_c: np.ndarray, p_t: np.ndarray) -> np.ndarray:
    """Residuals of the joint-ratio decomposition, cell by cell.

    ``p_c`` and ``p_t`` are discrete joints over the same grid, rows indexing
    feature cells ``x`` and columns indexing classes ``y``.  For every cell
    with mass in ``p_c`` the residual
    ``|p_t/p_c - (w_y + beta_{x,y})|`` is returned (zero elsewhere); the
    decomposition is an algebraic identity, so residuals are at floating
    point noise level (< 1e-12) whenever the support condition holds.
    """
    p_c = np.asarray(p_c, dtype=np.float64)
    p_t = np.asarray(p_t, dtype=np.float64)
    if p_c.shape != p_t.shape or p_c.ndim != 2:
        raise SupportMismatch(f"joints must share a 2-d grid, got {p_c.shape} and {p_t.shape}")
    if np.any(p_c < 0.0) or np.any(p_t < 0.0):
        raise SupportMismatch("joint distributions cannot have negative mass")
    if np.any((p_t > 0.0) & (p_c == 0.0)):
        raise SupportMismatch("p_t has mass where p_c has none")

    marg_c = p_c.sum(axis=0)
    marg_t = p_t.sum(axis=0)
    live = p_c > 0.0
    residual = np.zeros_like(p_c)
    for y in range(p_c.shape[1]):
        if marg_c[y] == 0.0:
            continue  # whole class empty in both joints; nothing to check
        w_y = marg_t[y] / marg_c[y]
        cond_c = p_c[:, y] / marg_c[y]
        cond_t = p_t[:, y] / marg_t[y] if marg_t[y] > 0.0 else np.zeros_like(cond_c)
        rows = live[:, y]
        ratio = p_t[rows, y] / p_c[rows, y]
        beta = w_y * (cond_t[rows] / cond_c[rows] - 1.0)
        residual[rows, y] = np.abs(ratio - (w_y + beta))
    return residual
