"""End-to-end orchestration: decompose, retrieve, prompt, generate, evaluate.

A run processes an embedding stream against preloaded artifacts (store,
concept dictionary, image mean) and produces one JSONL trace per image
plus a corpus MetricsReport. Traces are merged and written in id order and
contain no volatile fields, so serial and parallel executions of the same
run are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GenerationError, PipelineError
from .generation import GenerationConfig, generate
from .metrics import MetricsReport, evaluate_reports
from .prompts import DegradedPromptWarning, PromptSpec, build_prompt
from .splice import (
    ConceptDictionary,
    load_concept_dictionary,
    reconstruction_similarity,
    select_top_tau,
    solve_nn_lasso,
)
from .store import EmbeddingStore, ingest, iter_jsonl, read_store
from .vocab import DEFAULT_NORMALIZATION, TextNormalizationConfig

_MAGIC = b"CEMB"


@dataclass(frozen=True)
class PipelineConfig:
    """One run's strategy, artifact paths, and tuning values.

    Defaults follow the standard profile: retrieve 3 neighbours, keep 5
    keywords, regularize at 0.3.
    """

    strategy: str
    store_path: str | None = None
    dict_path: str | None = None
    image_mean_path: str | None = None
    vocab_path: str | None = None
    lam: float = 0.3
    tau: int = 5
    k: int = 3
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    exclude_self: bool = False
    solver_tol: float = 1e-8
    solver_max_iter: int = 10_000
    normalization: TextNormalizationConfig = DEFAULT_NORMALIZATION
    parallel: bool = False
    max_in_flight: int = 4

    @property
    def uses_concepts(self) -> bool:
        return self.strategy in ("concepts", "cemrag")

    @property
    def uses_retrieval(self) -> bool:
        return self.strategy in ("rag", "cemrag")

    def __post_init__(self):
        if self.strategy not in ("image_only", "concepts", "rag", "cemrag"):
            raise PipelineError(f"unknown strategy {self.strategy!r}")
        if self.uses_concepts and not (self.dict_path and self.image_mean_path):
            raise PipelineError(
                f"strategy {self.strategy!r} requires dict_path and image_mean_path"
            )
        if self.uses_retrieval and not self.store_path:
            raise PipelineError(f"strategy {self.strategy!r} requires store_path")


def load_store_any(path: str | Path) -> EmbeddingStore:
    """Load a store from the binary format or, failing the magic check, JSONL."""
    path = Path(path)
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == _MAGIC:
        return read_store(path)
    rows = list(iter_jsonl(path))
    if not rows:
        raise PipelineError(f"{path}: empty store input")
    return ingest(rows, expected_dim=len(rows[0]["vector"]))


@dataclass
class _Resources:
    store: EmbeddingStore | None
    dictionary: ConceptDictionary | None


def _load_resources(config: PipelineConfig) -> _Resources:
    store = load_store_any(config.store_path) if config.uses_retrieval else None
    dictionary = None
    if config.uses_concepts:
        vocabulary = None
        if config.vocab_path:
            from .vocab import Vocabulary

            vocabulary = Vocabulary.read_tsv(config.vocab_path)
        dictionary = load_concept_dictionary(
            config.dict_path, config.image_mean_path, vocabulary
        )
    dims = set()
    if store is not None:
        dims.add(store.dimension)
    if dictionary is not None:
        dims.add(dictionary.dim)
    if len(dims) > 1:
        raise PipelineError(f"dimension mismatch across artifacts: {sorted(dims)}")
    return _Resources(store=store, dictionary=dictionary)


def _check_record_dim(record: Mapping, resources: _Resources) -> np.ndarray:
    vector = np.asarray(record["vector"], dtype=np.float64)
    for artifact_dim in (
        resources.store.dimension if resources.store else None,
        resources.dictionary.dim if resources.dictionary else None,
    ):
        if artifact_dim is not None and vector.shape[0] != artifact_dim:
            raise PipelineError(
                f"record {record.get('id')!r}: dimension {vector.shape[0]} "
                f"!= artifact dimension {artifact_dim}"
            )
    return vector


def _process_image(
    record: Mapping, config: PipelineConfig, resources: _Resources
) -> dict:
    record_id = record["id"]
    vector = _check_record_dim(record, resources)
    trace: dict = {"id": record_id, "strategy": config.strategy}

    concept_set = None
    if config.uses_concepts:
        dictionary = resources.dictionary
        v_tilde = dictionary.center_image(vector)
        decomposition = solve_nn_lasso(
            dictionary, v_tilde, config.lam,
            tol=config.solver_tol, max_iter=config.solver_max_iter,
        )
        concept_set = select_top_tau(decomposition, dictionary.terms, config.tau)
        recon = reconstruction_similarity(dictionary, decomposition, v_tilde)
        trace["keywords"] = [[t, c] for t, c in concept_set.keywords]
        trace["nnz"] = decomposition.nnz
        trace["all_zero"] = decomposition.all_zero
        trace["recon_cosine"] = recon

    retrieved_reports = None
    if config.uses_retrieval:
        exclude = record_id if config.exclude_self else None
        result = resources.store.top_k(vector, config.k, exclude_id=exclude)
        trace["retrieval"] = [[hit_id, sim] for hit_id, sim, _ in result.hits]
        retrieved_reports = tuple(r if r is not None else "" for r in result.reports)

    spec = PromptSpec(
        strategy=config.strategy,
        keywords=concept_set,
        retrieved_reports=retrieved_reports,
    )
    degraded = config.strategy == "cemrag" and len(concept_set) == 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegradedPromptWarning)
        prompt = build_prompt(spec)
    trace["degraded"] = degraded
    trace["prompt_sha256"] = hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    generated = generate(prompt, config.generation, record_id)
    trace["report"] = generated.text
    return trace


@dataclass(frozen=True)
class PipelineResult:
    traces: tuple[dict, ...]
    metrics: MetricsReport


def _trace_lines(traces: Sequence[dict]) -> str:
    ordered = sorted(traces, key=lambda t: t["id"])
    return "".join(
        json.dumps(t, sort_keys=True, ensure_ascii=False) + "\n" for t in ordered
    )


def write_traces(traces: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text(_trace_lines(traces), encoding="utf-8")


def run_pipeline(
    config: PipelineConfig,
    records: Sequence[Mapping] | str | Path,
    trace_path: str | Path | None = None,
    metrics_path: str | Path | None = None,
) -> PipelineResult:
    """Process every record; write traces and metrics if paths are given.

    On a generation failure the traces completed so far are still written
    before PipelineError is raised, preserving a partial trace.
    """
    if isinstance(records, (str, Path)):
        records = list(iter_jsonl(records))
    else:
        records = list(records)
    ids = [r.get("id") for r in records]
    if len(set(ids)) != len(ids):
        raise PipelineError("duplicate ids in input records")
    resources = _load_resources(config)

    traces: list[dict] = []
    failure: Exception | None = None
    if config.parallel:
        with ThreadPoolExecutor(max_workers=max(1, config.max_in_flight)) as pool:
            futures = [
                pool.submit(_process_image, record, config, resources)
                for record in records
            ]
            for future in futures:
                try:
                    traces.append(future.result())
                except GenerationError as exc:
                    failure = failure or exc
    else:
        for record in records:
            try:
                traces.append(_process_image(record, config, resources))
            except GenerationError as exc:
                failure = exc
                break

    if failure is not None:
        if trace_path is not None:
            write_traces(traces, trace_path)
        raise PipelineError(
            f"generation failed after {len(traces)} completed images: {failure}"
        ) from failure

    by_id = {t["id"]: t for t in traces}
    references = {
        r["id"]: r["report"]
        for r in records
        if isinstance(r.get("report"), str)
    }
    scored_ids = [i for i in sorted(by_id) if i in references]
    generated = {i: by_id[i]["report"] for i in scored_ids}
    keywords = None
    decompositions = None
    if config.uses_concepts:
        keywords = {
            i: [term for term, _ in by_id[i]["keywords"]] for i in scored_ids
        }
        decompositions = {
            i: {"nnz": by_id[i]["nnz"], "recon_cosine": by_id[i]["recon_cosine"]}
            for i in scored_ids
        }
    metrics = evaluate_reports(
        generated,
        {i: references[i] for i in scored_ids},
        keywords=keywords,
        decompositions=decompositions,
        config=config.normalization,
    )
    for record_id in scored_ids:
        by_id[record_id]["metrics"] = metrics.per_image[record_id].to_dict()

    if trace_path is not None:
        write_traces(traces, trace_path)
    if metrics_path is not None:
        Path(metrics_path).write_text(metrics.to_json(), encoding="utf-8")
    return PipelineResult(traces=tuple(sorted(traces, key=lambda t: t["id"])), metrics=metrics)
