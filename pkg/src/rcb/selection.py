"""Demonstration scoring, ranking, and selection.

All scores follow a single higher-is-better convention: cosine similarity
is used as-is and anything distance-like must be negated at ingestion.
Selections are deterministic; ties in score break by ascending example id.
The chosen demonstrations are returned in prompt order, lowest adjusted
score first, so the strongest demonstration sits closest to the query.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Example, LabeledDataset
from .errors import KTooLarge, MissingEmbedding
from .weights import BiasVector, ClassWeightVector, combined_weights


@dataclass(frozen=True)
class Scorer:
    """Base scoring function for (candidate, query) pairs.

    ``cosine`` scores by cosine similarity of embeddings; ``random`` draws a
    deterministic pseudo-uniform score per (seed, query id, candidate id),
    which realizes the random-selection baseline as a Top-K over random
    scores.
    """

    kind: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cosine", "random"):
            raise ValueError(f"unknown scorer kind {self.kind!r}")


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def _hash_unit_interval(token: str) -> float:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


def score_all(scorer: Scorer, ds: LabeledDataset, query: Example) -> np.ndarray:
    """Base score of every dataset example against the query, dataset order."""
    if scorer.kind == "cosine":
        if query.embedding is None:
            raise MissingEmbedding(f"query {query.id!r} has no embedding")
        for ex in ds.examples:
            if ex.embedding is None:
                raise MissingEmbedding(f"example {ex.id!r} has no embedding")
        matrix = _unit_rows(ds.embedding_matrix())
        q = np.asarray(query.embedding, dtype=np.float64)
        q_norm = np.linalg.norm(q)
        if q_norm == 0.0:
            q_norm = 1.0
        return matrix @ (q / q_norm)
    return np.array(
        [_hash_unit_interval(f"{scorer.seed}:{query.id}:{ex.id}") for ex in ds.examples]
    )


@dataclass(frozen=True)
class Candidate:
    """One ranked candidate: the example plus its base and adjusted scores."""

    example: Example
    class_index: int
    base_score: float
    adjusted_score: float

    @property
    def id(self) -> str:
        return self.example.id


class RankedCandidates:
    """Candidates sorted by adjusted score descending, ties by ascending id."""

    def __init__(self, query_id: str, candidates: list[Candidate]):
        order = sorted(
            range(len(candidates)),
            key=lambda i: (-candidates[i].adjusted_score, candidates[i].id),
        )
        self.query_id = query_id
        self.entries: tuple[Candidate, ...] = tuple(candidates[i] for i in order)
        # Parallel arrays for vectorized reweighting.
        self._base = np.array([c.base_score for c in self.entries])
        self._classes = np.array([c.class_index for c in self.entries], dtype=np.int64)
        ids = [c.id for c in self.entries]
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(ids))] = np.arange(len(ids))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def base_scores(self) -> np.ndarray:
        return self._base

    @property
    def class_indices(self) -> np.ndarray:
        return self._classes


def _ranked_from_scores(
    ds: LabeledDataset, query: Example, base_scores: np.ndarray
) -> RankedCandidates:
    candidates = [
        Candidate(ex, int(j), float(s), float(s))
        for ex, j, s in zip(ds.examples, ds.class_indices, base_scores)
    ]
    return RankedCandidates(query.id, candidates)


def _select_top(ranked: RankedCandidates, adjusted: np.ndarray, count: int) -> list[Candidate]:
    """K best entries by the supplied adjusted scores, prompt-ordered ascending."""
    order = np.lexsort((ranked._id_rank, -adjusted))
    chosen = order[:count]
    picked = [
        replace(ranked.entries[i], adjusted_score=float(adjusted[i])) for i in chosen
    ]
    picked.reverse()  # ascending adjusted score for prompting
    return picked


def top_k(ds: LabeledDataset, query: Example, scorer: Scorer, k: int) -> list[Candidate]:
    """The ``k`` highest-scoring examples, prompt-ordered ascending by score."""
    if k > len(ds):
        raise KTooLarge(f"requested {k} demonstrations from a pool of {len(ds)}")
    ranked = _ranked_from_scores(ds, query, score_all(scorer, ds, query))
    return _select_top(ranked, ranked.base_scores, k)


def candidate_pool(
    ds: LabeledDataset, query: Example, scorer: Scorer, k_prime: int
) -> RankedCandidates:
    """The top ``k_prime`` candidates by base score, as a reusable ranking.

    A generous pool keeps tail classes represented before any reweighting;
    shortfalls are an error rather than a silent shrink.
    """
    if k_prime > len(ds):
        raise KTooLarge(f"candidate pool of {k_prime} requested from a pool of {len(ds)}")
    ranked = _ranked_from_scores(ds, query, score_all(scorer, ds, query))
    return RankedCandidates(query.id, list(ranked.entries[:k_prime]))


def reweighted_select(
    pool: RankedCandidates,
    w: ClassWeightVector,
    beta: BiasVector | np.ndarray | None,
    k: int,
) -> list[Candidate]:
    """Top ``k`` by ``(w + beta)[class] * base_score``.

    With ``beta`` zero this is the classical reweighting baseline; with both
    weights identity it degenerates to plain Top-K over the pool.  The
    selected set is invariant under any positive scaling of ``w + beta``.
    """
    if k > len(pool):
        raise KTooLarge(f"requested {k} demonstrations from a pool of {len(pool)}")
    multiplier = combined_weights(w, beta)
    if int(pool.class_indices.max(initial=-1)) >= multiplier.shape[0]:
        raise KTooLarge(
            f"pool has class index {int(pool.class_indices.max())} beyond {multiplier.shape[0]} weights"
        )
    adjusted = multiplier[pool.class_indices] * pool.base_scores
    return _select_top(pool, adjusted, k)


def stratified_select(
    ds: LabeledDataset, query: Example, scorer: Scorer, k: int
) -> list[Candidate]:
    """Per-class quota selection: the top ``k / num_classes`` of each class.

    When the class count does not divide ``k``, each class gets the floor
    quota and the remainder goes to the classes whose best candidate scores
    highest.
    """
    num_classes = ds.num_classes
    base_quota, remainder = divmod(k, num_classes)
    ranked = _ranked_from_scores(ds, query, score_all(scorer, ds, query))

    per_class: dict[int, list[Candidate]] = {j: [] for j in range(num_classes)}
    for cand in ranked.entries:  # already sorted best-first with tie rule
        per_class[cand.class_index].append(cand)

    quotas = [base_quota] * num_classes
    if remainder:
        # Rank classes by their best candidate's score (tie: ascending id).
        def best_key(j: int):
            best = per_class[j][0] if per_class[j] else None
            return (-best.base_score, best.id) if best else (np.inf, "")

        for j in sorted(range(num_classes), key=best_key)[:remainder]:
            quotas[j] += 1

    chosen: list[Candidate] = []
    for j in range(num_classes):
        if len(per_class[j]) < quotas[j]:
            raise KTooLarge(
                f"class {ds.label_space[j]!r} has {len(per_class[j])} candidates, quota is {quotas[j]}"
            )
        chosen.extend(per_class[j][: quotas[j]])
    chosen.sort(key=lambda c: (-c.adjusted_score, c.id))
    chosen.reverse()  # ascending adjusted score for prompting
    return chosen


def oversample(ds: LabeledDataset) -> LabeledDataset:
    """Duplicate tail-class examples cyclically until every class matches the head.

    Replicas get fresh ids suffixed with their replica index, so id
    uniqueness holds while the underlying texts repeat.
    """
    target = max(ds.counts)
    augmented = list(ds.examples)
    for j in range(ds.num_classes):
        members = ds.by_class(j)
        deficit = target - len(members)
        for r in range(deficit):
            original = members[r % len(members)]
            replica_index = r // len(members) + 1
            augmented.append(
                Example(
                    f"{original.id}#r{replica_index}",
                    original.text,
                    original.label,
                    original.embedding,
                )
            )
    return ds.replace_examples(augmented)


def undersample(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Uniformly trim head classes until every class matches the smallest."""
    target = min(ds.counts)
    rng = np.random.default_rng(seed)
    keep_positions: list[int] = []
    for j in range(ds.num_classes):
        positions = np.flatnonzero(ds.class_indices == j)
        if len(positions) > target:
            positions = rng.choice(positions, size=target, replace=False)
        keep_positions.extend(int(p) for p in positions)
    keep_positions.sort()
    return ds.replace_examples([ds.examples[p] for p in keep_positions])
