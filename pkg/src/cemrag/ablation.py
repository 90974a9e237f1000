"""Decomposition quality sweep over vocabulary size, penalty, and keyword count.

For each grid point the sweep decomposes every image and aggregates
concept precision against the reference reports, reconstruction cosine,
sparsity, and the number of all-zero decompositions. Because the ranked
vocabulary at size m1 is a prefix of the one at size m2 >= m1, a single
concept-embedding file at the largest size serves the whole grid; the
dictionary is re-centered for each sub-vocabulary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import SpliceError
from .metrics import concept_precision
from .splice import (
    build_centered_dictionary,
    reconstruction_similarity,
    select_top_tau,
    solve_nn_lasso,
)
from .vocab import DEFAULT_NORMALIZATION, TextNormalizationConfig, build_vocabulary


@dataclass(frozen=True)
class AblationCell:
    """Aggregates for one (vocabulary size, lambda, tau) grid point.

    Means exclude images whose precision is undefined (all-zero
    decompositions) but their count is reported.
    """

    vocab_size: int
    lam: float
    tau: int
    mean_precision: float | None
    mean_recon_cosine: float | None
    mean_nnz: float
    all_zero_count: int
    undefined_precision_count: int
    image_count: int


@dataclass(frozen=True)
class AblationResult:
    cells: tuple[AblationCell, ...]
    # (vocab_size, lam) -> per-image diagnostics in input order:
    # {"id", "objective", "nnz", "all_zero", "recon_cosine"}
    per_image: Mapping[tuple[int, float], tuple[dict, ...]]
    split_label: str


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def run_ablation(
    corpus: Sequence[str],
    records: Sequence[Mapping],
    dict_terms: Sequence[str],
    dict_vectors: np.ndarray,
    image_mean: np.ndarray,
    vocab_sizes: Sequence[int],
    lambdas: Sequence[float],
    taus: Sequence[int],
    config: TextNormalizationConfig = DEFAULT_NORMALIZATION,
    solver_tol: float = 1e-8,
    solver_max_iter: int = 10_000,
    split_ids: set[str] | None = None,
    split_label: str = "all",
) -> AblationResult:
    """Sweep the grid; cells come back sorted by (vocab_size, lambda, tau).

    ``corpus`` supplies the report texts the vocabulary is built from;
    ``records`` the evaluated images ({"id", "vector", "report"}).
    ``split_ids`` restricts evaluation to a subset of record ids.
    """
    vocab_sizes = sorted(set(vocab_sizes))
    lambdas = sorted(set(lambdas))
    taus = sorted(set(taus))
    if not vocab_sizes or not lambdas or not taus:
        raise SpliceError("empty ablation grid")

    m_max = max(vocab_sizes)
    vocabulary = build_vocabulary(corpus, m_max, config)
    if vocabulary.m < m_max:
        raise SpliceError(
            f"corpus yields only {vocabulary.m} bigrams; grid needs {m_max}"
        )
    vector_by_term = {t: np.asarray(v, dtype=np.float64)
                      for t, v in zip(dict_terms, dict_vectors)}
    for term in vocabulary.terms:
        if term not in vector_by_term:
            raise SpliceError(f"missing concept embedding for vocabulary term {term!r}")

    evaluated = [
        r for r in records if split_ids is None or r["id"] in split_ids
    ]
    if not evaluated:
        raise SpliceError("no records selected for ablation")

    cells: list[AblationCell] = []
    per_image: dict[tuple[int, float], tuple[dict, ...]] = {}
    for m in vocab_sizes:
        sub_vocab = vocabulary.prefix(m)
        raw = np.stack([vector_by_term[t] for t in sub_vocab.terms])
        dictionary = build_centered_dictionary(
            sub_vocab.terms, raw, image_mean, sub_vocab
        )
        for lam in lambdas:
            decomposed = []
            diagnostics = []
            for record in evaluated:
                v_tilde = dictionary.center_image(
                    np.asarray(record["vector"], dtype=np.float64)
                )
                decomposition = solve_nn_lasso(
                    dictionary, v_tilde, lam, tol=solver_tol, max_iter=solver_max_iter
                )
                recon = reconstruction_similarity(dictionary, decomposition, v_tilde)
                decomposed.append((record, decomposition))
                diagnostics.append({
                    "id": record["id"],
                    "objective": decomposition.objective,
                    "nnz": decomposition.nnz,
                    "all_zero": decomposition.all_zero,
                    "recon_cosine": recon,
                })
            per_image[(m, lam)] = tuple(diagnostics)

            all_zero_count = sum(1 for d in diagnostics if d["all_zero"])
            mean_nnz = float(np.mean([d["nnz"] for d in diagnostics]))
            recons = [d["recon_cosine"] for d in diagnostics
                      if d["recon_cosine"] is not None]
            for tau in taus:
                precisions = []
                undefined = 0
                for record, decomposition in decomposed:
                    keywords = select_top_tau(decomposition, sub_vocab, tau)
                    score = concept_precision(keywords, record.get("report") or "", config)
                    if score is None:
                        undefined += 1
                    else:
                        precisions.append(score)
                cells.append(AblationCell(
                    vocab_size=m,
                    lam=lam,
                    tau=tau,
                    mean_precision=_mean(precisions),
                    mean_recon_cosine=_mean(recons),
                    mean_nnz=mean_nnz,
                    all_zero_count=all_zero_count,
                    undefined_precision_count=undefined,
                    image_count=len(evaluated),
                ))
    return AblationResult(
        cells=tuple(cells), per_image=per_image, split_label=split_label
    )


def _set_digest(entries) -> str:
    payload = "\n".join(sorted(entries)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:12]


def ablation_csv(
    result: AblationResult,
    config: TextNormalizationConfig = DEFAULT_NORMALIZATION,
) -> str:
    """Deterministic CSV with a header comment recording the evaluation
    split and digests of the normalization lists in effect."""
    lemma_entries = [f"{k}\t{v}" for k, v in config.lemma_table.items()]
    header = (
        f"# split={result.split_label};"
        f"stopwords_sha256={_set_digest(config.stopwords)};"
        f"acronyms_sha256={_set_digest(config.acronym_exclusions)};"
        f"lemmas_sha256={_set_digest(lemma_entries)}\n"
    )
    columns = (
        "vocab_size,lambda,tau,mean_precision,mean_recon_cosine,mean_nnz,"
        "all_zero_count,undefined_precision_count,image_count\n"
    )
    rows = []
    for cell in result.cells:
        rows.append(",".join([
            str(cell.vocab_size),
            repr(cell.lam),
            str(cell.tau),
            "" if cell.mean_precision is None else repr(cell.mean_precision),
            "" if cell.mean_recon_cosine is None else repr(cell.mean_recon_cosine),
            repr(cell.mean_nnz),
            str(cell.all_zero_count),
            str(cell.undefined_precision_count),
            str(cell.image_count),
        ]) + "\n")
    return header + columns + "".join(rows)


def load_ablation_inputs(
    corpus_path: str | Path,
    embeddings_path: str | Path,
    dict_path: str | Path,
    image_mean_path: str | Path,
):
    """Read the four artifact files into run_ablation's in-memory inputs."""
    from .store import iter_jsonl

    corpus = [row["report"] for row in iter_jsonl(corpus_path)]
    records = list(iter_jsonl(embeddings_path))
    terms, vectors = [], []
    for row in iter_jsonl(dict_path):
        terms.append(row["term"])
        vectors.append(row["vector"])
    image_mean = np.asarray(
        json.loads(Path(image_mean_path).read_text(encoding="utf-8")),
        dtype=np.float64,
    )
    return corpus, records, terms, np.asarray(vectors, dtype=np.float64), image_mean
