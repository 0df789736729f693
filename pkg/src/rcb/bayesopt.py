"""Conditional-bias estimation by Bayesian optimization.

The bias vector is fitted by minimizing the mean mismatch on a held-out
balanced subset: for each balanced query, demonstrations are selected from
the remaining imbalanced pool with scores multiplied by ``w + beta``, a
prediction is made, and the per-query mismatch (0/1 error for
classification, negative exact match for generation) is averaged.

The objective is a black box, so a Gaussian-process surrogate with a
squared-exponential kernel models it over the search box and the next query
point is the Expected Improvement argmax among uniformly sampled candidates.
Everything is deterministic given the seed and a pure objective.

Conventions fixed here:

* Minimization.  Improvement at a candidate is
  ``incumbent_value - posterior_mean - epsilon``; this is the standard EI
  formula applied to the negated objective.
* Kernel inputs are rescaled to the unit box, with length scale expressed
  in those units.  No hyperparameter learning; observed values are centered
  on their mean, which also serves as the prior mean far from data.
* Cholesky failures escalate the diagonal jitter tenfold up to a cap before
  giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Example, LabeledDataset
from .errors import EmptyDemos, NonPositiveWeight, PredictorFailure, SingularGram
from .predictor import mismatch
from .selection import Candidate, RankedCandidates, Scorer, candidate_pool, reweighted_select
from .weights import BiasVector, ClassWeightVector, combined_weights


@dataclass(frozen=True)
class KernelConfig:
    length_scale: float = 0.2
    signal_variance: float = 1.0
    jitter: float = 1e-6
    max_jitter: float = 1e-2


@dataclass
class BOState:
    """Observation trace of one optimization run.

    ``points`` hold raw (unnormalized) coordinates inside the search box;
    the incumbent is the observed minimum.
    """

    box_lower: np.ndarray
    box_upper: np.ndarray
    kernel: KernelConfig = field(default_factory=KernelConfig)
    points: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    iteration: int = 0

    def __post_init__(self):
        self.box_lower = np.asarray(self.box_lower, dtype=np.float64)
        self.box_upper = np.asarray(self.box_upper, dtype=np.float64)
        self._factor_cache = None

    def observe(self, point: np.ndarray, value: float) -> None:
        point = np.asarray(point, dtype=np.float64)
        if np.any(point < self.box_lower - 1e-12) or np.any(point > self.box_upper + 1e-12):
            raise ValueError(f"observed point {point} outside the search box")
        self.points.append(point)
        self.values.append(float(value))
        self._factor_cache = None

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        if not self.values:
            raise ValueError("no observations yet")
        best = int(np.argmin(self.values))
        return self.points[best], self.values[best]

    # -- internals -----------------------------------------------------------

    def _normalize(self, points: np.ndarray) -> np.ndarray:
        span = self.box_upper - self.box_lower
        return (points - self.box_lower) / span

    def _kernel_matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sq = (
            np.sum(a**2, axis=1)[:, None]
            + np.sum(b**2, axis=1)[None, :]
            - 2.0 * (a @ b.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return self.kernel.signal_variance * np.exp(-sq / (2.0 * self.kernel.length_scale**2))

    def _factorization(self):
        """Cholesky of the jittered Gram matrix plus the centered-target solve."""
        if self._factor_cache is not None:
            return self._factor_cache
        z = self._normalize(np.vstack(self.points))
        y = np.asarray(self.values, dtype=np.float64)
        y_mean = float(y.mean())
        gram = self._kernel_matrix(z, z)
        jitter = self.kernel.jitter
        chol = None
        while jitter <= self.kernel.max_jitter:
            try:
                chol = np.linalg.cholesky(gram + jitter * np.eye(len(z)))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
        if chol is None:
            raise SingularGram(
                f"Gram matrix not positive definite up to jitter {self.kernel.max_jitter}"
            )
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y - y_mean))
        self._factor_cache = (z, chol, alpha, y_mean)
        return self._factor_cache


def gp_posterior(state: BOState, point: np.ndarray) -> tuple[float, float]:
    """Posterior mean and standard deviation at one point."""
    mean, std = gp_posterior_batch(state, np.asarray(point, dtype=np.float64)[None, :])
    return float(mean[0]), float(std[0])


def gp_posterior_batch(state: BOState, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized GP regression posterior over rows of ``points``.

    At an observed point the mean interpolates the observation to within the
    jitter scale; far from all observations the mean relaxes to the prior
    (the observed-value average) and the standard deviation to the signal
    amplitude.
    """
    if not state.points:
        raise ValueError("posterior requires at least one observation")
    z_obs, chol, alpha, y_mean = state._factorization()
    z = state._normalize(np.asarray(points, dtype=np.float64))
    cross = state._kernel_matrix(z, z_obs)
    mean = y_mean + cross @ alpha
    v = np.linalg.solve(chol, cross.T)
    var = state.kernel.signal_variance - np.sum(v**2, axis=0)
    np.maximum(var, 0.0, out=var)
    return mean, np.sqrt(var)


def _standard_normal_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def _standard_normal_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)


def ei_value(incumbent_value: float, mean, std, epsilon: float):
    """Expected improvement below the incumbent, in minimization form.

    ``EI = I * Phi(I / sigma) + sigma * phi(I / sigma)`` with
    ``I = incumbent_value - mean - epsilon``; defined as 0 wherever the
    posterior deviation vanishes.  Always nonnegative.
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    improvement = incumbent_value - mean - epsilon
    out = np.zeros_like(mean)
    positive = std > 0.0
    if np.any(positive):
        z = improvement[positive] / std[positive]
        out[positive] = improvement[positive] * _standard_normal_cdf(z) + std[
            positive
        ] * _standard_normal_pdf(z)
    np.maximum(out, 0.0, out=out)
    return out


def expected_improvement(state: BOState, point: np.ndarray, epsilon: float = 0.01) -> float:
    _, incumbent_value = state.incumbent
    mean, std = gp_posterior(state, point)
    return float(ei_value(incumbent_value, np.array([mean]), np.array([std]), epsilon)[0])


@dataclass(frozen=True)
class BOConfig:
    """Budget and exploration settings for one optimization run."""

    init_points: int = 8
    iterations: int = 30
    candidates_per_step: int = 1024
    epsilon: float = 0.01
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def __post_init__(self):
        if self.init_points < 2:
            raise ValueError("need at least two initial points to fit a surrogate")


def optimize(
    objective,
    box_lower: np.ndarray,
    box_upper: np.ndarray,
    config: BOConfig,
) -> tuple[np.ndarray, BOState]:
    """Minimize a black-box objective over a box; return the best observed point.

    Evaluates ``init_points`` seeded-uniform points, then for each iteration
    refits the surrogate, scores a fresh uniform candidate batch by expected
    improvement, and evaluates the true objective at the EI argmax.  Total
    objective evaluations: ``init_points + iterations``.  On an objective
    failure the partial trace is attached to the exception as
    ``partial_trace`` before it propagates.
    """
    box_lower = np.asarray(box_lower, dtype=np.float64)
    box_upper = np.asarray(box_upper, dtype=np.float64)
    if box_lower.shape != box_upper.shape or np.any(box_lower >= box_upper):
        raise ValueError("invalid search box")

    rng = np.random.default_rng(config.seed)
    state = BOState(box_lower=box_lower, box_upper=box_upper, kernel=config.kernel)

    def evaluate(point: np.ndarray) -> None:
        try:
            value = float(objective(point))
        except Exception as exc:
            exc.partial_trace = state
            raise
        state.observe(point, value)

    dims = box_lower.shape[0]
    for point in rng.uniform(box_lower, box_upper, size=(config.init_points, dims)):
        evaluate(point)

    for _ in range(config.iterations):
        state.iteration += 1
        candidates = rng.uniform(box_lower, box_upper, size=(config.candidates_per_step, dims))
        mean, std = gp_posterior_batch(state, candidates)
        _, incumbent_value = state.incumbent
        scores = ei_value(incumbent_value, mean, std, config.epsilon)
        evaluate(candidates[int(np.argmax(scores))])

    best_point, _ = state.incumbent
    return best_point.copy(), state


def default_search_box(w: ClassWeightVector) -> tuple[np.ndarray, np.ndarray]:
    """Per-class bias bounds keeping ``w + beta`` strictly positive.

    Lower bound shrinks any class weight tenfold; upper bound allows
    amplification past twice the largest weight.
    """
    arr = w.as_array()
    return -0.9 * arr, np.full_like(arr, 2.0 * arr.max())


class Objective:
    """Mean mismatch on the balanced subset as a function of the bias vector.

    Demonstrations for each balanced query are selected from the remaining
    pool by reweighted Top-K; base scores and candidate rankings do not
    depend on the bias, so they are computed once up front.  Evaluations are
    cached on the quantized bias so re-observing a point performs no new
    predictor calls.
    """

    def __init__(
        self,
        balanced: LabeledDataset,
        pool: LabeledDataset,
        predictor,
        scorer: Scorer,
        class_weights: ClassWeightVector,
        k_demos: int,
        candidate_limit: int | None = None,
        metric: str = "error_rate",
    ):
        if len(balanced) == 0:
            raise EmptyDemos("balanced subset is empty")
        if len(pool) == 0:
            raise EmptyDemos("demonstration pool is empty")
        self.balanced = balanced
        self.predictor = predictor
        self.class_weights = class_weights
        self.k_demos = k_demos
        self.metric = metric
        limit = len(pool) if candidate_limit is None else min(candidate_limit, len(pool))
        self._pools: list[RankedCandidates] = [
            candidate_pool(pool, query, scorer, limit) for query in balanced.examples
        ]
        self._references = [
            balanced.class_index(ex.label) if metric == "error_rate" else str(ex.label)
            for ex in balanced.examples
        ]
        self._cache: dict[tuple, float] = {}
        self.evaluations = 0
        self.predictor_calls = 0

    def _cache_key(self, beta: np.ndarray) -> tuple:
        return tuple(np.round(np.asarray(beta, dtype=np.float64), 12))

    def __call__(self, beta) -> float:
        return self.evaluate(beta)

    def evaluate(self, beta) -> float:
        """Mean mismatch over balanced queries with demonstrations reweighted by ``w + beta``."""
        beta_arr = beta.as_array() if isinstance(beta, BiasVector) else np.asarray(beta, dtype=np.float64)
        combined_weights(self.class_weights, beta_arr)  # raises NonPositiveWeight early
        self.evaluations += 1
        key = self._cache_key(beta_arr)
        if key in self._cache:
            return self._cache[key]

        total = 0.0
        for query, pool, reference in zip(self.balanced.examples, self._pools, self._references):
            demos = reweighted_select(pool, self.class_weights, beta_arr, self.k_demos)
            try:
                prediction = self.predictor.predict(demos, query)
                self.predictor_calls += 1
            except (NonPositiveWeight, PredictorFailure):
                raise
            except Exception as exc:
                raise PredictorFailure(query.id, exc) from exc
            total += mismatch(self.metric, prediction, reference)
        value = total / len(self.balanced)
        self._cache[key] = value
        return value


def estimate_bias(
    objective: Objective,
    config: BOConfig,
    box: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[BiasVector, BOState]:
    """Run the optimization and wrap the best point as a bounded bias vector."""
    if box is None:
        box = default_search_box(objective.class_weights)
    lower, upper = box
    best, state = optimize(objective, lower, upper, config)
    bias = BiasVector(tuple(float(b) for b in best), tuple(lower), tuple(upper))
    return bias, state
