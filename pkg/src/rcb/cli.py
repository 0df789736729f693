"""Config-driven experiment front end.

Three subcommands cover the pipeline: ``gen`` synthesizes an imbalanced
dataset file from a source, ``estimate-bias`` fits the class weights and
conditional bias once per dataset and saves them with the optimization
trace, and ``run`` selects demonstrations per test query with the
configured method, predicts, scores, and emits per-run JSON reports plus a
cross-seed CSV with mean and standard deviation.

Runs are deterministic given the config: reports carry a full config echo
and no timestamps, so identical invocations produce byte-identical files.

Exit codes: 0 success, 2 config error, 3 upstream service error, 4 data
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import bayesopt, encoder, evaluation, predictor, selection, synthetic, weights
from .dataset import (
    ImbalanceSpec,
    LabeledDataset,
    balanced_subset,
    imbalance_ratio,
    load_dataset,
    make_imbalanced,
    save_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    PredictorFailure,
    RcbError,
    ServiceError,
)

METHODS = ("random", "topk", "oversample", "undersample", "stratified", "reweight", "rcb")

# Seed-stream offsets keeping the per-run random draws independent.
_OFFSET_IMBALANCE = 104729
_OFFSET_BALANCED = 15485863
_OFFSET_UNDERSAMPLE = 32452843


@dataclass
class RunConfig:
    """Validated view over the JSON config; the raw dict is kept for echo."""

    task: str
    dataset: dict
    test: dict | None
    imbalance: dict | None
    encoder: dict | None
    method: str
    k_demos: int
    candidate_pool: int
    weight_scheme: str | None
    bo: dict
    predictor: dict
    seeds: list[int]
    output_dir: str
    weights_dir: str | None
    reuse_balanced_subset: bool
    prompt_order: str
    diagnostics: dict | None
    skip_failures: bool
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        def need(key: str):
            if key not in raw:
                raise ConfigError(f"config missing required field {key!r}")
            return raw[key]

        task = raw.get("task", "classification")
        if task not in ("classification", "generation"):
            raise ConfigError(f"unknown task {task!r}")
        method = raw.get("method", "topk")
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
        weight_scheme = raw.get("weight_scheme")
        if method in ("reweight", "rcb") and not weight_scheme:
            raise ConfigError(f"method {method!r} requires a weight_scheme")
        bo = dict(raw.get("bo", {}))
        if method == "rcb":
            bo.setdefault("iterations", 30)
            bo.setdefault("balanced_size", 100)
        seeds = list(raw.get("seeds", [0]))
        if not seeds:
            raise ConfigError("seeds must be nonempty")
        config = cls(
            task=task,
            dataset=need("dataset"),
            test=raw.get("test"),
            imbalance=raw.get("imbalance"),
            encoder=raw.get("encoder"),
            method=method,
            k_demos=int(raw.get("k_demos", 8)),
            candidate_pool=int(raw.get("candidate_pool", 1600)),
            weight_scheme=weight_scheme,
            bo=bo,
            predictor=dict(raw.get("predictor", {"kind": "synthetic_oracle"})),
            seeds=seeds,
            output_dir=str(raw.get("output_dir", "out")),
            weights_dir=raw.get("weights_dir"),
            reuse_balanced_subset=bool(raw.get("reuse_balanced_subset", False)),
            prompt_order=str(raw.get("prompt_order", "ascending")),
            diagnostics=raw.get("diagnostics"),
            skip_failures=bool(raw.get("skip_failures", False)),
            raw=raw,
        )
        if config.prompt_order not in ("ascending", "descending"):
            raise ConfigError(f"unknown prompt_order {config.prompt_order!r}")
        return config

    def weights_path(self, seed: int) -> str:
        directory = self.weights_dir or self.output_dir
        return os.path.join(directory, f"weights_seed{seed}.json")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# Dataset and predictor construction
# ---------------------------------------------------------------------------


def build_dataset(cfg: dict, seed: int) -> LabeledDataset:
    """Materialize a dataset: a file on disk or a seeded synthetic world."""
    kind = cfg.get("kind", "file")
    if kind == "file":
        path = cfg.get("path")
        if not path:
            raise ConfigError("file dataset needs a 'path'")
        return load_dataset(path, label_space=cfg.get("labels"))
    if kind == "gaussian_world":
        return synthetic.gaussian_world(
            num_classes=int(cfg.get("classes", 4)),
            per_class=int(cfg.get("per_class", 500)),
            dim=int(cfg.get("dim", 8)),
            noise=float(cfg.get("noise", 0.3)),
            seed=int(cfg.get("seed", 0)) + seed,
            id_prefix=str(cfg.get("id_prefix", "w")),
        )
    raise ConfigError(f"unknown dataset kind {kind!r}")


def build_encoder(cfg: dict, base_url: str | None = None):
    kind = cfg.get("kind", "synthetic_hash")
    if kind == "synthetic_hash":
        return encoder.SyntheticHashProvider(
            dimension=int(cfg.get("dimension", 64)), seed=int(cfg.get("seed", 0))
        )
    if kind == "precomputed":
        path = cfg.get("path")
        if not path:
            raise ConfigError("precomputed encoder needs a 'path'")
        return encoder.PrecomputedProvider.from_file(path, cfg.get("dimension"))
    if kind == "http":
        url = base_url or cfg.get("base_url")
        if not url:
            raise ConfigError("http encoder needs a 'base_url'")
        return encoder.HttpProvider(url, dimension=int(cfg.get("dimension", 64)))
    raise ConfigError(f"unknown encoder kind {kind!r}")


def ensure_embeddings(ds: LabeledDataset, config: RunConfig, base_url: str | None) -> LabeledDataset:
    missing = [ex for ex in ds.examples if ex.embedding is None]
    if not missing:
        return ds
    if config.encoder is None:
        raise ConfigError(
            f"{len(missing)} examples lack embeddings and no encoder is configured"
        )
    provider = build_encoder(config.encoder, base_url)
    vectors = encoder.encode(provider, [ex.text for ex in missing])
    replacement = {ex.id: vec for ex, vec in zip(missing, vectors)}
    return ds.replace_examples(
        [ex if ex.id not in replacement else ex.with_embedding(replacement[ex.id]) for ex in ds.examples]
    )


def build_predictor_object(config: RunConfig, annotated: LabeledDataset, base_url: str | None):
    cfg = config.predictor
    kind = cfg.get("kind", "synthetic_oracle")
    if kind == "synthetic_oracle":
        oracle = predictor.OracleConfig(
            num_classes=annotated.num_classes,
            smoothing=float(cfg.get("smoothing", 1.0)),
            bandwidth_scale=float(cfg.get("bandwidth_scale", 0.5)),
        )
        return predictor.SyntheticOraclePredictor(oracle)
    if kind == "echo_label":
        return predictor.EchoLabelPredictor(annotated.class_index)
    url = base_url or cfg.get("base_url")
    if not url:
        raise ConfigError(f"predictor kind {kind!r} needs a 'base_url'")
    template = predictor.PromptTemplate(**cfg.get("template", {}))
    client = predictor.HttpLlmClient(url)
    if kind == "perplexity_llm":
        verbalizer = cfg.get("verbalizer") or [str(label) for label in annotated.label_space]
        return predictor.PerplexityLlmPredictor(client, verbalizer, template)
    if kind == "generate_llm":
        return predictor.GenerationLlmPredictor(
            client, template, int(cfg.get("max_new_tokens", predictor.DEFAULT_MAX_NEW_TOKENS))
        )
    raise ConfigError(f"unknown predictor kind {kind!r}")


def build_imbalance_spec(config: RunConfig, seed: int) -> ImbalanceSpec | None:
    if not config.imbalance:
        return None
    cfg = config.imbalance
    return ImbalanceSpec(
        ratio=float(cfg.get("ratio", 1.0)),
        head_count=int(cfg["head_count"]),
        profile=str(cfg.get("profile", "exponential")),
        seed=int(cfg.get("seed", 0)) + _OFFSET_IMBALANCE + seed,
        permute_head_order=bool(cfg.get("permute_head_order", False)),
    )


def prepare_annotated(config: RunConfig, seed: int, base_url: str | None) -> LabeledDataset:
    ds = build_dataset(config.dataset, seed)
    spec = build_imbalance_spec(config, seed)
    if spec is not None:
        ds = make_imbalanced(ds, spec)
    return ensure_embeddings(ds, config, base_url)


# ---------------------------------------------------------------------------
# Selection dispatch
# ---------------------------------------------------------------------------


class MethodRunner:
    """Per-seed selection state shared across all test queries."""

    def __init__(self, config: RunConfig, annotated: LabeledDataset, seed: int,
                 w: weights.ClassWeightVector | None, beta: np.ndarray | None,
                 excluded_ids: set[str]):
        self.config = config
        self.method = config.method
        self.k = config.k_demos
        self.seed = seed
        self.w = w
        self.beta = beta
        self.cosine = selection.Scorer("cosine")
        self.random = selection.Scorer("random", seed=seed)

        pool = annotated
        if excluded_ids:
            pool = annotated.replace_examples(
                [ex for ex in annotated.examples if ex.id not in excluded_ids]
            )
        if self.method == "oversample":
            pool = selection.oversample(pool)
        elif self.method == "undersample":
            pool = selection.undersample(pool, seed + _OFFSET_UNDERSAMPLE)
        self.pool = pool

    def select(self, query) -> list[selection.Candidate]:
        method = self.method
        if method == "random":
            demos = selection.top_k(self.pool, query, self.random, self.k)
        elif method in ("topk", "oversample", "undersample"):
            demos = selection.top_k(self.pool, query, self.cosine, self.k)
        elif method == "stratified":
            demos = selection.stratified_select(self.pool, query, self.cosine, self.k)
        elif method == "reweight":
            pool = selection.candidate_pool(self.pool, query, self.cosine, len(self.pool))
            demos = selection.reweighted_select(pool, self.w, None, self.k)
        elif method == "rcb":
            pool = selection.candidate_pool(
                self.pool, query, self.cosine, self.config.candidate_pool
            )
            demos = selection.reweighted_select(pool, self.w, self.beta, self.k)
        else:  # pragma: no cover - guarded by config validation
            raise ConfigError(f"unknown method {method!r}")
        if self.config.prompt_order == "descending":
            demos = list(reversed(demos))
        return demos


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(config: RunConfig, out_path: str | None) -> int:
    """Write an imbalanced dataset file plus a manifest of achieved counts."""
    if config.imbalance is None:
        raise ConfigError("gen requires an 'imbalance' section")
    source = build_dataset(config.dataset, seed=0)
    spec = ImbalanceSpec(
        ratio=float(config.imbalance.get("ratio", 1.0)),
        head_count=int(config.imbalance["head_count"]),
        profile=str(config.imbalance.get("profile", "exponential")),
        seed=int(config.imbalance.get("seed", 0)),
        permute_head_order=bool(config.imbalance.get("permute_head_order", False)),
    )
    imbalanced = make_imbalanced(source, spec)

    os.makedirs(config.output_dir, exist_ok=True)
    path = out_path or os.path.join(config.output_dir, "imbalanced.jsonl")
    save_dataset(imbalanced, path)
    manifest = {
        "path": path,
        "labels": list(imbalanced.label_space),
        "counts": list(imbalanced.counts),
        "achieved_ratio": imbalance_ratio(imbalanced),
        "spec": {
            "ratio": spec.ratio,
            "head_count": spec.head_count,
            "profile": spec.profile,
            "seed": spec.seed,
        },
    }
    manifest_path = path + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {len(imbalanced)} examples to {path}")
    print(f"counts: {list(imbalanced.counts)} (ratio {manifest['achieved_ratio']:.2f})")
    return 0


def _estimate_for_seed(config: RunConfig, seed: int, base_url: str | None) -> dict:
    annotated = prepare_annotated(config, seed, base_url)
    if config.weight_scheme is None:
        raise ConfigError("estimate-bias requires a weight_scheme")
    w = weights.compute_weights(config.weight_scheme, annotated.counts)
    subset, remainder = balanced_subset(
        annotated, int(config.bo.get("balanced_size", 100)), seed + _OFFSET_BALANCED
    )
    predictor_obj = build_predictor_object(config, annotated, base_url)
    metric = "error_rate" if config.task == "classification" else "negative_em"
    objective = bayesopt.Objective(
        subset,
        remainder,
        predictor_obj,
        selection.Scorer("cosine"),
        w,
        config.k_demos,
        candidate_limit=config.candidate_pool,
        metric=metric,
    )
    bo_config = bayesopt.BOConfig(
        init_points=int(config.bo.get("init_points", 8)),
        iterations=int(config.bo.get("iterations", 30)),
        candidates_per_step=int(config.bo.get("candidates_per_step", 1024)),
        epsilon=float(config.bo.get("epsilon", 0.01)),
        seed=seed,
    )
    bias, state = bayesopt.estimate_bias(objective, bo_config)

    incumbents = np.minimum.accumulate(state.values)
    return {
        "seed": seed,
        "weight_scheme": config.weight_scheme,
        "w": [float(v) for v in w.values],
        "beta": [float(v) for v in bias.values],
        "box_lower": [float(v) for v in bias.lower],
        "box_upper": [float(v) for v in bias.upper],
        "objective_at_beta": state.incumbent[1],
        "balanced_ids": sorted(ex.id for ex in subset.examples),
        "counts": list(annotated.counts),
        "trace": [
            {"point": [float(v) for v in p], "value": float(v), "incumbent": float(inc)}
            for p, v, inc in zip(state.points, state.values, incumbents)
        ],
        "config": config.raw,
    }


def cmd_estimate_bias(config: RunConfig, out_path: str | None, base_url: str | None) -> int:
    """Estimate w and the conditional bias once per seed; save with the trace."""
    os.makedirs(config.weights_dir or config.output_dir, exist_ok=True)
    if out_path and len(config.seeds) > 1:
        raise ConfigError("--out with estimate-bias requires a single seed")
    for seed in config.seeds:
        record = _estimate_for_seed(config, seed, base_url)
        path = out_path or config.weights_path(seed)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(record, handle, indent=2, sort_keys=True)
            handle.write("\n")
        print(
            f"seed {seed}: objective {record['objective_at_beta']:.4f} "
            f"beta {[round(b, 4) for b in record['beta']]} -> {path}"
        )
    return 0


def _load_weights_file(config: RunConfig, seed: int) -> dict:
    path = config.weights_path(seed)
    if not os.path.exists(path):
        raise ConfigError(
            f"method 'rcb' needs the weights file {path}; run 'rcb estimate-bias' first"
        )
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def run_single(config: RunConfig, seed: int, base_url: str | None) -> dict:
    """One seeded end-to-end run: select, predict, and score every test query."""
    annotated = prepare_annotated(config, seed, base_url)
    if config.test is None:
        raise ConfigError("run requires a 'test' dataset section")
    test = ensure_embeddings(build_dataset(config.test, seed), config, base_url)

    w = None
    beta = None
    excluded: set[str] = set()
    if config.method == "reweight":
        w = weights.compute_weights(config.weight_scheme, annotated.counts)
    elif config.method == "rcb":
        record = _load_weights_file(config, seed)
        w = weights.ClassWeightVector(tuple(record["w"]), record["weight_scheme"])
        beta = np.asarray(record["beta"], dtype=np.float64)
        if not config.reuse_balanced_subset:
            excluded = set(record["balanced_ids"])

    predictor_obj = build_predictor_object(config, annotated, base_url)
    runner = MethodRunner(config, annotated, seed, w, beta, excluded)

    predictions: list[Any] = []
    references: list[Any] = []
    skipped: list[str] = []
    for query in test.examples:
        try:
            demos = runner.select(query)
            predictions.append(predictor_obj.predict(demos, query))
        except (RcbError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            if config.skip_failures:
                skipped.append(query.id)
                continue
            if isinstance(exc, RcbError):
                raise
            raise PredictorFailure(query.id, exc) from exc
        if config.task == "classification":
            references.append(annotated.class_index(query.label))
        else:
            references.append(str(query.label))

    if not predictions:
        raise DataError("no test queries survived; nothing to score")

    if config.task == "classification":
        report = evaluation.classification_metrics(predictions, references, annotated.num_classes)
    else:
        ems = [evaluation.exact_match(str(p), r) for p, r in zip(predictions, references)]
        em = float(np.mean(ems))
        report = evaluation.EvalReport(
            overall_accuracy=em, per_class_accuracy=[], macro_f1=0.0, em=em
        )

    if config.diagnostics and config.task == "classification":
        report.kl_per_class = [
            float(v)
            for v in evaluation.kl_conditional_diagnostic(
                annotated,
                test,
                clusters=int(config.diagnostics.get("kl_clusters", 20)),
                seed=int(config.diagnostics.get("kl_seed", 0)),
            )
        ]

    report.metadata = {
        "seed": seed,
        "method": config.method,
        "phi": imbalance_ratio(annotated),
        "k_demos": config.k_demos,
        "candidate_pool": config.candidate_pool,
        "weight_scheme": config.weight_scheme,
        "beta": None if beta is None else [float(b) for b in beta],
        "w": None if w is None else [float(v) for v in w.values],
        "annotated_counts": list(annotated.counts),
        "test_size": len(test),
        "skipped": skipped,
    }
    return {"config": config.raw, "seed": seed, "report": report.to_dict()}


def cmd_run(config: RunConfig, base_url: str | None) -> int:
    """Run every seed, then write JSON reports and the cross-seed CSV."""
    os.makedirs(config.output_dir, exist_ok=True)
    rows = []
    phi_tag = None
    for seed in config.seeds:
        result = run_single(config, seed, base_url)
        phi = result["report"]["metadata"]["phi"]
        phi_tag = f"{phi:g}" if phi_tag is None else phi_tag
        report_path = os.path.join(
            config.output_dir, f"report_{config.method}_phi{phi:g}_seed{seed}.json"
        )
        with open(report_path, "w", encoding="utf-8") as handle:
            json.dump(result, handle, indent=2, sort_keys=True)
            handle.write("\n")
        rows.append(
            {
                "method": config.method,
                "phi": phi,
                "K": config.k_demos,
                "seed": seed,
                "accuracy": result["report"]["overall_accuracy"],
                "macro_f1": result["report"]["macro_f1"],
                "em": result["report"]["em"],
            }
        )
        print(
            f"seed {seed}: accuracy {rows[-1]['accuracy']:.4f} "
            f"macro_f1 {rows[-1]['macro_f1']:.4f}"
        )

    csv_path = os.path.join(config.output_dir, f"summary_{config.method}_phi{phi_tag}.csv")
    fieldnames = ["method", "phi", "K", "seed", "accuracy", "macro_f1", "em"]
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        for stat in ("mean", "std"):
            agg = {"method": config.method, "phi": rows[0]["phi"], "K": config.k_demos, "seed": stat}
            for column in ("accuracy", "macro_f1", "em"):
                values = [row[column] for row in rows if row[column] is not None]
                if values:
                    mean, std = evaluation.mean_std(values)
                    agg[column] = mean if stat == "mean" else std
                else:
                    agg[column] = None
            writer.writerow(agg)
    print(f"summary -> {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcb",
        description="Demonstration-selection experiments under class-imbalanced annotation pools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "synthesize an imbalanced dataset file and its manifest"),
        ("estimate-bias", "fit class weights and conditional bias; save with BO trace"),
        ("run", "run selection + prediction + evaluation for each seed"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON run config")
        cmd.add_argument("--seed", type=int, default=None, help="override the seeds list")
        cmd.add_argument("--method", default=None, help="override the selection method")
        cmd.add_argument("--ratio", type=float, default=None, help="override the imbalance ratio")
        cmd.add_argument("--out", default=None, help="override the output path/directory")
        cmd.add_argument("--base-url", default=None, help="override remote endpoint base URL")
        cmd.add_argument(
            "--skip-failures",
            action="store_true",
            help="skip failing queries instead of aborting; skipped ids are reported",
        )
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    raw = dict(config.raw)
    if args.seed is not None:
        raw["seeds"] = [args.seed]
    if args.method is not None:
        raw["method"] = args.method
    if args.ratio is not None:
        if "imbalance" not in raw or raw["imbalance"] is None:
            raise ConfigError("--ratio given but the config has no 'imbalance' section")
        raw["imbalance"] = dict(raw["imbalance"], ratio=args.ratio)
    if args.out is not None and args.command == "run":
        raw["output_dir"] = args.out
    if args.skip_failures:
        raw["skip_failures"] = True
    return RunConfig.from_dict(raw)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _apply_overrides(load_config(args.config), args)
        if args.command == "gen":
            return cmd_gen(config, args.out)
        if args.command == "estimate-bias":
            return cmd_estimate_bias(config, args.out, args.base_url)
        return cmd_run(config, args.base_url)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ServiceError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    except RcbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
