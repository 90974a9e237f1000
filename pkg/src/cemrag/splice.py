"""Sparse non-negative concept decomposition of image embeddings.

An image embedding is centered against the corpus image mean, normalized,
and approximated as a non-negative combination of centered, normalized
concept-text embeddings:

    minimize over a >= 0:   ||C a - v||^2 + 2 * lam * sum(a)

where the columns of C are the centered unit concept vectors and v is the
centered unit image vector. The solver is cyclic coordinate descent with
non-negative soft-thresholding; unit columns make each coordinate update a
closed-form clip, so no line search is needed. The top coefficients give
the keyword set injected into prompts.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SpliceError
from .vocab import Vocabulary

_UNIT_NORM_TOL = 1e-6


def center_normalize(x: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """(x - mean) scaled to unit Euclidean norm."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if x.shape != mean.shape:
        raise SpliceError(f"dimension mismatch: {x.shape[0]} vs {mean.shape[0]}")
    centered = x - mean
    norm = float(np.linalg.norm(centered))
    if norm == 0.0:
        raise SpliceError("vector equals the mean; zero norm after centering")
    return centered / norm


@dataclass(frozen=True)
class ConceptDictionary:
    """Concept vocabulary terms with raw vectors and centering statistics.

    ``centered`` holds the centered, unit-normalized concept vectors as
    rows (m, d); the decomposition treats them as dictionary columns.
    """

    terms: tuple[str, ...]
    concept_vectors: np.ndarray  # (m, d) raw text embeddings
    concept_mean: np.ndarray  # (d,)
    image_mean: np.ndarray  # (d,)
    centered: np.ndarray  # (m, d) unit rows
    vocabulary: Vocabulary | None = None

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return int(self.concept_vectors.shape[1])

    def center_image(self, v: np.ndarray) -> np.ndarray:
        """Center an image embedding by the image mean and normalize."""
        return center_normalize(v, self.image_mean)


def build_centered_dictionary(
    terms: Sequence[str],
    raw_concepts: np.ndarray,
    raw_image_mean: np.ndarray,
    vocabulary: Vocabulary | None = None,
) -> ConceptDictionary:
    """Center concept vectors by their own mean and normalize each to unit norm.

    Raises on a degenerate concept (exactly equal to the concept mean);
    exact duplicate concept vectors are allowed but warned about since they
    yield identical dictionary columns.
    """
    raw = np.asarray(raw_concepts, dtype=np.float64)
    if raw.ndim != 2:
        raise SpliceError("raw_concepts must be a 2-D array of shape (m, d)")
    if len(terms) != raw.shape[0]:
        raise SpliceError(f"{len(terms)} terms but {raw.shape[0]} concept vectors")
    image_mean = np.asarray(raw_image_mean, dtype=np.float64).reshape(-1)
    if image_mean.shape[0] != raw.shape[1]:
        raise SpliceError(
            f"image mean dimension {image_mean.shape[0]} != concept dimension {raw.shape[1]}"
        )

    seen: dict[bytes, str] = {}
    for term, row in zip(terms, raw):
        key = row.tobytes()
        if key in seen:
            warnings.warn(
                f"duplicate concept vectors: {term!r} equals {seen[key]!r}",
                stacklevel=2,
            )
        else:
            seen[key] = term

    concept_mean = raw.mean(axis=0)
    centered = raw - concept_mean
    norms = np.linalg.norm(centered, axis=1)
    for term, norm in zip(terms, norms):
        if norm == 0.0:
            raise SpliceError(
                f"degenerate concept {term!r}: equals the concept mean "
                "(zero norm after centering)"
            )
    centered /= norms[:, None]
    return ConceptDictionary(
        terms=tuple(terms),
        concept_vectors=raw,
        concept_mean=concept_mean,
        image_mean=image_mean,
        centered=centered,
        vocabulary=vocabulary,
    )


@dataclass(frozen=True)
class SparseDecomposition:
    """Non-negative coefficients over the vocabulary plus solver diagnostics."""

    alpha: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    all_zero: bool

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.alpha))


def objective_value(
    dictionary: ConceptDictionary, alpha: np.ndarray, v_tilde: np.ndarray, lam: float
) -> float:
    """||C a - v||^2 + 2 lam sum(a), recomputed from scratch."""
    residual = dictionary.centered.T @ alpha - v_tilde
    return float(residual @ residual + 2.0 * lam * np.sum(alpha))


def solve_nn_lasso(
    dictionary: ConceptDictionary,
    v_tilde: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> SparseDecomposition:
    """Cyclic coordinate descent for the non-negative L1 problem.

    Coordinates are updated in fixed order 0..m-1 from a zero start; each
    update is max(c_j . residual_without_j - lam, 0) because columns have
    unit norm. Terminates when the largest coordinate change in a sweep
    drops below tol, or after max_iter sweeps (converged flag cleared).
    Identical inputs give bitwise-identical output.
    """
    if lam <= 0.0:
        raise SpliceError(f"lambda must be positive, got {lam}")
    v_tilde = np.asarray(v_tilde, dtype=np.float64).reshape(-1)
    if v_tilde.shape[0] != dictionary.dim:
        raise SpliceError(
            f"embedding dimension {v_tilde.shape[0]} != dictionary dimension {dictionary.dim}"
        )
    norm = float(np.linalg.norm(v_tilde))
    if abs(norm - 1.0) > _UNIT_NORM_TOL:
        raise SpliceError(f"v_tilde must have unit norm, got {norm!r}")

    rows = dictionary.centered  # (m, d), unit rows acting as columns
    m = rows.shape[0]
    alpha = np.zeros(m, dtype=np.float64)
    residual = v_tilde.copy()

    converged = False
    sweeps = 0
    while sweeps < max_iter:
        sweeps += 1
        max_delta = 0.0
        for j in range(m):
            old = alpha[j]
            # correlation with the residual excluding coordinate j
            rho = float(rows[j] @ residual) + old
            new = rho - lam
            if new < 0.0:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                residual -= delta * rows[j]
                alpha[j] = new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
        if max_delta < tol:
            converged = True
            break

    return SparseDecomposition(
        alpha=alpha,
        lam=float(lam),
        objective=objective_value(dictionary, alpha, v_tilde, lam),
        iterations=sweeps,
        converged=converged,
        all_zero=not np.any(alpha),
    )


def kkt_residual(
    dictionary: ConceptDictionary,
    alpha: np.ndarray,
    v_tilde: np.ndarray,
    lam: float,
) -> float:
    """Largest optimality violation of a candidate solution.

    Active coordinates must have correlation with the residual equal to
    lam; inactive ones at most lam. Returns the max violation over all
    coordinates (0 at an exact optimum).
    """
    residual = v_tilde - dictionary.centered.T @ alpha
    corr = dictionary.centered @ residual
    active = alpha > 0.0
    violation = 0.0
    if np.any(active):
        violation = float(np.max(np.abs(corr[active] - lam)))
    if np.any(~active):
        violation = max(violation, float(np.max(corr[~active] - lam)), 0.0)
    return violation


@dataclass(frozen=True)
class ConceptSet:
    """Ordered keyword selection from a decomposition."""

    keywords: tuple[tuple[str, float], ...]
    tau_requested: int

    @property
    def terms(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.keywords)

    def __len__(self) -> int:
        return len(self.keywords)


def select_top_tau(
    decomposition: SparseDecomposition,
    vocabulary: Vocabulary | Sequence[str],
    tau: int,
) -> ConceptSet:
    """Up to tau strictly positive coefficients, largest first.

    Ties break by vocabulary rank, then term text. Returns fewer than tau
    keywords when fewer coefficients are positive, and an empty set for an
    all-zero decomposition.
    """
    if tau <= 0:
        raise SpliceError(f"tau must be positive, got {tau}")
    terms = vocabulary.terms if isinstance(vocabulary, Vocabulary) else tuple(vocabulary)
    alpha = decomposition.alpha
    if len(terms) != alpha.shape[0]:
        raise SpliceError(
            f"vocabulary size {len(terms)} != coefficient length {alpha.shape[0]}"
        )
    positive = [
        (terms[j], float(alpha[j]), j) for j in range(len(terms)) if alpha[j] > 0.0
    ]
    positive.sort(key=lambda item: (-item[1], item[2], item[0]))
    return ConceptSet(
        keywords=tuple((term, coeff) for term, coeff, _ in positive[:tau]),
        tau_requested=tau,
    )


def reconstruction_similarity(
    dictionary: ConceptDictionary,
    decomposition: SparseDecomposition,
    v_tilde: np.ndarray,
) -> float | None:
    """Cosine between the sparse reconstruction and the centered embedding.

    Returns None for an all-zero decomposition: no reconstruction exists,
    which is a distinct outcome from a similarity of 0.
    """
    if decomposition.all_zero:
        return None
    v_tilde = np.asarray(v_tilde, dtype=np.float64).reshape(-1)
    recon = dictionary.centered.T @ decomposition.alpha
    recon_norm = float(np.linalg.norm(recon))
    if recon_norm == 0.0:
        raise SpliceError("reconstruction is the zero vector despite nonzero alpha")
    v_norm = float(np.linalg.norm(v_tilde))
    return float(recon @ v_tilde / (recon_norm * v_norm))


def load_concept_dictionary(
    dict_path: str | Path,
    image_mean_path: str | Path,
    vocabulary: Vocabulary | None = None,
) -> ConceptDictionary:
    """Load concept embeddings (JSONL) and the image mean (JSON vector).

    Dictionary rows must appear in vocabulary rank order; when a
    vocabulary is supplied the order is checked and a mismatch is an
    error.
    """
    terms: list[str] = []
    vectors: list[list[float]] = []
    with open(dict_path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                terms.append(row["term"])
                vectors.append(row["vector"])
            except KeyError as exc:
                raise SpliceError(f"{dict_path}:{lineno}: missing field {exc}") from None
    if not terms:
        raise SpliceError(f"{dict_path}: empty concept dictionary")
    if vocabulary is not None:
        expected = vocabulary.terms
        if tuple(terms) != expected:
            for i, (got, want) in enumerate(zip(terms, expected)):
                if got != want:
                    raise SpliceError(
                        f"{dict_path}: term order mismatch at rank {i}: "
                        f"got {got!r}, vocabulary has {want!r}"
                    )
            raise SpliceError(
                f"{dict_path}: {len(terms)} terms but vocabulary has {len(expected)}"
            )
    image_mean = np.asarray(
        json.loads(Path(image_mean_path).read_text(encoding="utf-8")),
        dtype=np.float64,
    )
    return build_centered_dictionary(terms, np.asarray(vectors), image_mean, vocabulary)
