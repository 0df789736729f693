"""Prediction backends for in-context learning runs.

Three kinds of predictor share one ``predict(demos, query)`` interface:

* a synthetic oracle that scores classes by a demonstration-estimated
  posterior, ``argmax_y likelihood(x | y) * prior(y)``, with a Gaussian
  kernel density per class and a Laplace-smoothed prior over demonstration
  counts.  It is deterministic, runs with no model in the loop, and reacts
  to demonstration composition, which is exactly the behavior under study;
* perplexity classification against a remote scoring endpoint: each
  verbalized label is appended to the prompt and the label whose
  continuation has the lowest perplexity wins;
* direct generation against a remote endpoint, capped at 50 new tokens by
  default and scored by exact match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ._http import HttpJsonClient
from .dataset import Example
from .errors import (
    ClientError,
    EmptyDemos,
    EmptySequence,
    MissingLogprobs,
)
from .evaluation import exact_match
from .selection import Candidate

DEFAULT_MAX_NEW_TOKENS = 50

METRICS = ("error_rate", "negative_em")


def mismatch(kind: str, prediction, reference) -> float:
    """Per-example mismatch: 0/1 error for classification, -EM for generation."""
    if kind == "error_rate":
        return 0.0 if prediction == reference else 1.0
    if kind == "negative_em":
        return -float(exact_match(str(prediction), str(reference)))
    raise ValueError(f"unknown mismatch metric {kind!r}; expected one of {METRICS}")


def perplexity(token_logprobs: Sequence[float]) -> float:
    """``exp(-mean(log p))`` over the token log-probabilities."""
    if len(token_logprobs) == 0:
        raise EmptySequence("perplexity of an empty token sequence")
    arr = np.asarray(token_logprobs, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("token log-probabilities must be finite")
    return float(math.exp(-arr.mean()))


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleConfig:
    """Posterior-oracle settings.

    ``bandwidth_scale`` multiplies the median pairwise demonstration
    distance to give the kernel bandwidth; ``smoothing`` is the Laplace
    constant on the class prior.
    """

    num_classes: int
    smoothing: float = 1.0
    bandwidth_scale: float = 0.5


def _log_gaussian_kde(points: np.ndarray, query: np.ndarray, bandwidth: float) -> float:
    # log of (1/m) sum_i N(query; x_i, h^2 I)
    d = points.shape[1]
    sq = np.sum((points - query[None, :]) ** 2, axis=1)
    log_norm = -0.5 * d * math.log(2.0 * math.pi * bandwidth**2)
    exponents = -sq / (2.0 * bandwidth**2)
    peak = exponents.max()
    return log_norm + peak + math.log(np.exp(exponents - peak).sum()) - math.log(len(points))


def kde_posterior_predict(
    demo_embeddings: np.ndarray,
    demo_labels: np.ndarray,
    query_embedding: np.ndarray,
    config: OracleConfig,
) -> int:
    """Class with the largest estimated ``likelihood * prior``; ties go low.

    The prior is the Laplace-smoothed demonstration label frequency.  The
    likelihood is a Gaussian KDE over the class's demonstration embeddings
    with bandwidth ``bandwidth_scale * median pairwise demo distance``;
    classes absent from the demonstrations fall back to a uniform floor,
    the density of a single point two bandwidths away.
    """
    demo_embeddings = np.asarray(demo_embeddings, dtype=np.float64)
    demo_labels = np.asarray(demo_labels, dtype=np.int64)
    query = np.asarray(query_embedding, dtype=np.float64)
    m = demo_embeddings.shape[0]
    if m == 0:
        raise EmptyDemos("oracle prediction requires at least one demonstration")

    if m > 1:
        diffs = demo_embeddings[:, None, :] - demo_embeddings[None, :, :]
        dists = np.sqrt(np.sum(diffs**2, axis=2))
        median = float(np.median(dists[np.triu_indices(m, k=1)]))
    else:
        median = 0.0
    bandwidth = max(config.bandwidth_scale * median, 1e-6)

    k = config.num_classes
    counts = np.bincount(demo_labels, minlength=k).astype(np.float64)
    with np.errstate(divide="ignore"):
        log_prior = np.log((counts + config.smoothing) / (m + k * config.smoothing))

    d = demo_embeddings.shape[1]
    floor = -0.5 * d * math.log(2.0 * math.pi * bandwidth**2) - 2.0
    log_likelihood = np.full(k, floor)
    for j in range(k):
        members = demo_embeddings[demo_labels == j]
        if len(members):
            log_likelihood[j] = _log_gaussian_kde(members, query, bandwidth)

    return int(np.argmax(log_prior + log_likelihood))


# ---------------------------------------------------------------------------
# Prompts and remote clients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction header plus repeated input/output blocks."""

    instruction: str = ""
    input_prefix: str = "Input: "
    output_prefix: str = "Output: "
    block_separator: str = "\n"

    def render(self, demos: Sequence[tuple[str, str]], query_text: str) -> str:
        parts = []
        if self.instruction:
            parts.append(self.instruction)
        for text, output in demos:
            parts.append(
                f"{self.input_prefix}{text}{self.block_separator}{self.output_prefix}{output}"
            )
        # The prompt ends exactly with the output prefix; the scored
        # continuation or generated text follows it verbatim.
        parts.append(f"{self.input_prefix}{query_text}{self.block_separator}{self.output_prefix}")
        return (self.block_separator * 2).join(parts)


class ScoringClient(Protocol):
    def score(self, prompt: str, continuation: str) -> list[float]: ...

    def generate(self, prompt: str, max_new_tokens: int) -> str: ...


class HttpLlmClient:
    """Scoring and generation over the JSON HTTP contract.

    ``POST /score`` with ``{"prompt", "continuation"}`` returns
    ``{"token_logprobs": [...]}`` for the continuation tokens;
    ``POST /generate`` with ``{"prompt", "max_new_tokens"}`` returns
    ``{"text": ...}``.  Auth and retry policy live in the shared client.
    """

    def __init__(self, base_url: str, max_retries: int = 3, max_concurrency: int = 4,
                 backoff: float = 0.25, session=None):
        self._client = HttpJsonClient(
            base_url, max_retries=max_retries, backoff=backoff,
            max_concurrency=max_concurrency, session=session,
        )

    def score(self, prompt: str, continuation: str) -> list[float]:
        body = self._client.post_json("/score", {"prompt": prompt, "continuation": continuation})
        logprobs = body.get("token_logprobs")
        if not logprobs:
            raise MissingLogprobs("scoring endpoint returned no per-token log probabilities")
        return [float(v) for v in logprobs]

    def generate(self, prompt: str, max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS) -> str:
        body = self._client.post_json(
            "/generate", {"prompt": prompt, "max_new_tokens": int(max_new_tokens)}
        )
        text = body.get("text")
        if text is None:
            raise ClientError("generation endpoint returned no text field")
        return str(text)


def _demo_pairs(demos: Sequence[Candidate], verbalizer: Sequence[str] | None) -> list[tuple[str, str]]:
    pairs = []
    for cand in demos:
        output = verbalizer[cand.class_index] if verbalizer else str(cand.example.label)
        pairs.append((cand.example.text, output))
    return pairs


def predict_perplexity_llm(
    demos: Sequence[Candidate],
    query: Example,
    verbalizer: Sequence[str],
    client: ScoringClient,
    template: PromptTemplate | None = None,
) -> int:
    """Label whose verbalized continuation scores the lowest perplexity.

    Ties resolve to the lowest label index.  The verbalizer must assign a
    distinct string to every label.
    """
    if len(set(verbalizer)) != len(verbalizer):
        raise ValueError("verbalizer strings must be distinct")
    template = template or PromptTemplate()
    prompt = template.render(_demo_pairs(demos, verbalizer), query.text)
    scores = []
    for label_string in verbalizer:
        logprobs = client.score(prompt, label_string)
        if not logprobs:
            raise MissingLogprobs(f"no log probabilities for continuation {label_string!r}")
        scores.append(perplexity(logprobs))
    return int(np.argmin(scores))


def predict_generate_llm(
    demos: Sequence[Candidate],
    query: Example,
    client: ScoringClient,
    template: PromptTemplate | None = None,
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
) -> str:
    """Free-form generation continuing the demonstration prompt."""
    template = template or PromptTemplate()
    prompt = template.render(_demo_pairs(demos, None), query.text)
    return client.generate(prompt, max_new_tokens=max_new_tokens)


# ---------------------------------------------------------------------------
# Pipeline-facing predictor objects
# ---------------------------------------------------------------------------


class SyntheticOraclePredictor:
    """Oracle adapter over ranked candidates; returns a class index."""

    kind = "synthetic_oracle"

    def __init__(self, config: OracleConfig):
        self.config = config

    def predict(self, demos: Sequence[Candidate], query: Example) -> int:
        if not demos:
            raise EmptyDemos("no demonstrations supplied")
        embeddings = []
        labels = []
        for cand in demos:
            if cand.example.embedding is None:
                raise EmptyDemos(f"demonstration {cand.id!r} has no embedding")
            embeddings.append(np.asarray(cand.example.embedding, dtype=np.float64))
            labels.append(cand.class_index)
        if query.embedding is None:
            raise EmptyDemos(f"query {query.id!r} has no embedding")
        return kde_posterior_predict(
            np.vstack(embeddings), np.asarray(labels), np.asarray(query.embedding), self.config
        )


class PerplexityLlmPredictor:
    kind = "perplexity_llm"

    def __init__(self, client: ScoringClient, verbalizer: Sequence[str],
                 template: PromptTemplate | None = None):
        self.client = client
        self.verbalizer = list(verbalizer)
        self.template = template or PromptTemplate()

    def predict(self, demos: Sequence[Candidate], query: Example) -> int:
        return predict_perplexity_llm(demos, query, self.verbalizer, self.client, self.template)


class GenerationLlmPredictor:
    kind = "generate_llm"

    def __init__(self, client: ScoringClient, template: PromptTemplate | None = None,
                 max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS):
        self.client = client
        self.template = template or PromptTemplate()
        self.max_new_tokens = max_new_tokens

    def predict(self, demos: Sequence[Candidate], query: Example) -> str:
        return predict_generate_llm(
            demos, query, self.client, self.template, self.max_new_tokens
        )


class EchoLabelPredictor:
    """Diagnostic stub that answers with the query's own class index."""

    kind = "echo_label"

    def __init__(self, label_to_index):
        self._label_to_index = label_to_index

    def predict(self, demos: Sequence[Candidate], query: Example) -> int:
        return self._label_to_index(query.label)
