"""Synthetic planted-concept mini-corpus generator.

Draws unit concept vectors for invented radiology-style bigrams, composes
each image embedding as a sparse non-negative mixture of a few concepts
plus Gaussian noise, and writes a matching report containing the planted
bigrams as sentences. Because the true support of every image is known,
decomposition quality (concept precision, sparsity, reconstruction) can be
verified closed-loop without any clinical data.

All randomness flows through one seeded generator, so a given seed always
produces byte-identical output files.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .vocab import DEFAULT_NORMALIZATION, Vocabulary, build_vocabulary, normalize_text

_FIRST_TOKENS = (
    "apical", "basal", "basilar", "bibasilar", "bilateral", "central",
    "chronic", "costophrenic", "dense", "diffuse", "focal", "hazy", "hilar",
    "interstitial", "linear", "lingular", "lower", "mediastinal", "mild",
    "nodular", "patchy", "perihilar", "peripheral", "pleural", "residual",
    "retrocardiac", "streaky", "subsegmental", "upper", "vascular",
)
_SECOND_TOKENS = (
    "aeration", "airspace", "angle", "atelectasis", "calcification",
    "consolidation", "contour", "density", "edema", "effusion", "granuloma",
    "infiltrate", "marking", "nodule", "opacity", "prominence", "scarring",
    "silhouette", "thickening", "volume",
)


def term_pool(size: int) -> tuple[str, ...]:
    """First ``size`` bigrams of the fixed token-pair pool."""
    pool = [f"{a} {b}" for a, b in itertools.product(_FIRST_TOKENS, _SECOND_TOKENS)]
    if size > len(pool):
        raise ValueError(f"term pool holds {len(pool)} bigrams, requested {size}")
    return tuple(pool[:size])


@dataclass(frozen=True)
class SynthSpec:
    """Shape and noise parameters of a generated corpus."""

    seed: int
    n_images: int = 200
    vocab_size: int = 100
    dim: int = 128
    concepts_per_image: int = 5
    weight_low: float = 0.5
    weight_high: float = 1.0
    noise_sigma: float = 0.03
    omit_prob: float = 0.0


@dataclass(frozen=True)
class PlantedConcept:
    term: str
    weight: float
    written: bool  # whether the bigram was written into the report


@dataclass(frozen=True)
class SynthCorpus:
    """Generated corpus plus its construction record."""

    spec: SynthSpec
    ids: tuple[str, ...]
    embeddings: np.ndarray  # (n_images, dim)
    reports: tuple[str, ...]
    image_mean: np.ndarray  # (dim,)
    vocabulary: Vocabulary
    concept_vectors: np.ndarray  # (vocab_size, dim), vocabulary rank order
    manifest: tuple[tuple[PlantedConcept, ...], ...] = field(repr=False)

    def manifest_rows(self) -> list[dict]:
        return [
            {
                "id": self.ids[i],
                "planted": [[p.term, p.weight, p.written] for p in planted],
            }
            for i, planted in enumerate(self.manifest)
        ]


def generate_corpus(spec: SynthSpec) -> SynthCorpus:
    """Build a planted-concept corpus from a seed.

    Image i always includes concept (i mod vocab_size), so any corpus with
    at least vocab_size images covers every concept and the vocabulary
    built from the reports contains exactly the planted terms.
    """
    if spec.concepts_per_image < 1 or spec.concepts_per_image > spec.vocab_size:
        raise ValueError("concepts_per_image out of range")
    if spec.n_images < spec.vocab_size:
        raise ValueError(
            "need n_images >= vocab_size so every concept appears in some report"
        )
    rng = np.random.default_rng(spec.seed)
    terms = term_pool(spec.vocab_size)
    for term in terms:
        normalized = " ".join(normalize_text(term, DEFAULT_NORMALIZATION))
        if normalized != term:
            raise ValueError(f"term {term!r} is not normalization-stable")

    concepts = rng.normal(size=(spec.vocab_size, spec.dim))
    concepts /= np.linalg.norm(concepts, axis=1)[:, None]

    ids, embeddings, reports, manifest = [], [], [], []
    for i in range(spec.n_images):
        forced = i % spec.vocab_size
        others = [j for j in range(spec.vocab_size) if j != forced]
        extra = rng.choice(
            len(others), size=spec.concepts_per_image - 1, replace=False
        )
        planted_idx = [forced] + [others[int(j)] for j in extra]
        weights = rng.uniform(
            spec.weight_low, spec.weight_high, size=spec.concepts_per_image
        )
        noise = rng.normal(size=spec.dim) * spec.noise_sigma
        vector = weights @ concepts[planted_idx] + noise

        order = sorted(
            range(spec.concepts_per_image),
            key=lambda j: (-weights[j], planted_idx[j]),
        )
        planted = []
        sentences = []
        for j in order:
            written = bool(rng.random() >= spec.omit_prob)
            planted.append(
                PlantedConcept(terms[planted_idx[j]], float(weights[j]), written)
            )
            if written:
                sentences.append(terms[planted_idx[j]])
        report = ". ".join(sentences) + "." if sentences else ""

        ids.append(f"synth-{i:04d}")
        embeddings.append(vector)
        reports.append(report)
        manifest.append(tuple(planted))

    matrix = np.asarray(embeddings)
    vocabulary = build_vocabulary(reports, spec.vocab_size, DEFAULT_NORMALIZATION)
    if vocabulary.m != spec.vocab_size:
        raise ValueError(
            f"reports cover only {vocabulary.m} of {spec.vocab_size} concepts; "
            "lower omit_prob or add images"
        )
    by_term = {t: concepts[j] for j, t in enumerate(terms)}
    ordered_concepts = np.stack([by_term[t] for t in vocabulary.terms])

    return SynthCorpus(
        spec=spec,
        ids=tuple(ids),
        embeddings=matrix,
        reports=tuple(reports),
        image_mean=matrix.mean(axis=0),
        vocabulary=vocabulary,
        concept_vectors=ordered_concepts,
        manifest=tuple(manifest),
    )


def planting_rate(
    manifest_rows: Sequence[Mapping], tau: int
) -> float:
    """Construction-oracle precision bound.

    For each image, take the top min(tau, planted) concepts by planted
    weight and score the fraction actually written into the report; the
    mean over images is the precision an exact support-recovering
    decomposition would achieve.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    rates = []
    for row in manifest_rows:
        planted = sorted(row["planted"], key=lambda p: (-p[1], p[0]))
        top = planted[: min(tau, len(planted))]
        if not top:
            continue
        rates.append(sum(1 for p in top if p[2]) / len(top))
    if not rates:
        raise ValueError("empty manifest")
    return sum(rates) / len(rates)


def _dump_vector(vector: np.ndarray) -> list[float]:
    return [float(x) for x in vector]


def write_corpus(corpus: SynthCorpus, outdir: str | Path) -> dict[str, Path]:
    """Write the corpus artifacts; returns the path of each file.

    embeddings.jsonl  id, vector, report  (store / pipeline input)
    corpus.jsonl      id, report          (vocabulary builder input)
    dict.jsonl        term, vector        (vocabulary rank order)
    image_mean.json   mean embedding
    vocab.tsv         term<TAB>count
    manifest.jsonl    construction record (planted term, weight, written)
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {name: outdir / name for name in (
        "embeddings.jsonl", "corpus.jsonl", "dict.jsonl",
        "image_mean.json", "vocab.tsv", "manifest.jsonl",
    )}

    with open(paths["embeddings.jsonl"], "w", encoding="utf-8") as handle:
        for i, record_id in enumerate(corpus.ids):
            handle.write(json.dumps({
                "id": record_id,
                "vector": _dump_vector(corpus.embeddings[i]),
                "report": corpus.reports[i],
            }, sort_keys=True) + "\n")

    with open(paths["corpus.jsonl"], "w", encoding="utf-8") as handle:
        for record_id, report in zip(corpus.ids, corpus.reports):
            handle.write(json.dumps({"id": record_id, "report": report},
                                    sort_keys=True) + "\n")

    with open(paths["dict.jsonl"], "w", encoding="utf-8") as handle:
        for term, vector in zip(corpus.vocabulary.terms, corpus.concept_vectors):
            handle.write(json.dumps({"term": term, "vector": _dump_vector(vector)},
                                    sort_keys=True) + "\n")

    paths["image_mean.json"].write_text(
        json.dumps(_dump_vector(corpus.image_mean)) + "\n", encoding="utf-8"
    )
    corpus.vocabulary.write_tsv(paths["vocab.tsv"])

    with open(paths["manifest.jsonl"], "w", encoding="utf-8") as handle:
        for row in corpus.manifest_rows():
            handle.write(json.dumps(row, sort_keys=True) + "\n")

    return paths


def read_manifest(path: str | Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows
