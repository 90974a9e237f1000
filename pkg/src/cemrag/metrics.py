"""Report evaluation: BLEU-1/4, ROUGE-L, concept precision, label F1.

Text metrics share one tokenizer (lowercased whitespace split after
punctuation stripping) and are computed from scratch so scores are stable
across environments. Smoothing and tokenization conventions are pinned
here; absolute parity with other BLEU implementations is not a goal.

Label F1 aggregates externally produced binary pathology labels; this
module never runs a labeler.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import MetricsError
from .splice import ConceptSet
from .vocab import DEFAULT_NORMALIZATION, TextNormalizationConfig, normalize_text, tokenize

BLEU_EPSILON = 1e-9

CHEXBERT_14 = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged cardiomediastinum",
    "fracture",
    "lung lesion",
    "lung opacity",
    "no finding",
    "pleural effusion",
    "pleural other",
    "pneumonia",
    "pneumothorax",
    "support devices",
)

TOP5_FINDINGS = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "pleural effusion",
)

LABEL_SETS: Mapping[str, tuple[str, ...]] = {
    "chexbert14": CHEXBERT_14,
    "top5": TOP5_FINDINGS,
}


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_from_counts(
    matches: Sequence[int], totals: Sequence[int], cand_len: int, ref_len: int
) -> float:
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for matched, total in zip(matches, totals):
        if total == 0:
            precision = BLEU_EPSILON
        else:
            precision = max(matched, BLEU_EPSILON) / total
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / len(matches))
    brevity = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return 100.0 * brevity * geo_mean


def bleu_n(candidate: str, reference: str, n: int) -> float:
    """Single-pair BLEU on a 0-100 scale.

    Geometric mean of modified n-gram precisions for orders 1..n, with
    zero counts replaced by epsilon, times the brevity penalty
    exp(min(0, 1 - |ref| / |cand|)). Empty candidates score 0.
    """
    if n < 1:
        raise MetricsError(f"n must be >= 1, got {n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    matches, totals = [], []
    for order in range(1, n + 1):
        cand_counts = _ngram_counts(cand, order)
        ref_counts = _ngram_counts(ref, order)
        matches.append(sum(min(c, ref_counts[g]) for g, c in cand_counts.items()))
        totals.append(sum(cand_counts.values()))
    return _bleu_from_counts(matches, totals, len(cand), len(ref))


def corpus_bleu_n(pairs: Iterable[tuple[str, str]], n: int) -> float:
    """Corpus BLEU: n-gram match/total counts and lengths pooled over pairs."""
    if n < 1:
        raise MetricsError(f"n must be >= 1, got {n}")
    matches = [0] * n
    totals = [0] * n
    cand_len = ref_len = 0
    for candidate, reference in pairs:
        cand = tokenize(candidate)
        ref = tokenize(reference)
        cand_len += len(cand)
        ref_len += len(ref)
        for order in range(1, n + 1):
            cand_counts = _ngram_counts(cand, order)
            ref_counts = _ngram_counts(ref, order)
            matches[order - 1] += sum(
                min(c, ref_counts[g]) for g, c in cand_counts.items()
            )
            totals[order - 1] += sum(cand_counts.values())
    return _bleu_from_counts(matches, totals, cand_len, ref_len)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the classic rolling-row DP."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS F-measure with beta = 1; precision over |cand|, recall over |ref|."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def concept_precision(
    keywords: ConceptSet | Sequence[str],
    reference: str,
    config: TextNormalizationConfig = DEFAULT_NORMALIZATION,
) -> float | None:
    """Fraction of keyword bigrams present in the normalized reference.

    A bigram is present iff its two lemmas occur as an adjacent token pair
    after normalization, so the score ignores the reference's casing and
    punctuation. Returns None for an empty keyword set (undefined; callers
    exclude these from means and count them separately).
    """
    terms = keywords.terms if isinstance(keywords, ConceptSet) else tuple(keywords)
    if not terms:
        return None
    tokens = normalize_text(reference, config)
    adjacent = set(zip(tokens, tokens[1:]))
    matched = 0
    for term in terms:
        first, _, second = term.partition(" ")
        if (first, second) in adjacent:
            matched += 1
    return matched / len(terms)


@dataclass(frozen=True)
class LabelVector:
    """Binary pathology labels for one report under a named label set."""

    id: str
    labels: tuple[int, ...]
    label_set: str

    def __post_init__(self):
        if self.label_set not in LABEL_SETS:
            raise MetricsError(
                f"unknown label set {self.label_set!r}; expected one of {sorted(LABEL_SETS)}"
            )
        arity = len(LABEL_SETS[self.label_set])
        if len(self.labels) != arity:
            raise MetricsError(
                f"record {self.id!r}: {len(self.labels)} labels for "
                f"{self.label_set!r} (arity {arity})"
            )
        if any(v not in (0, 1) for v in self.labels):
            raise MetricsError(f"record {self.id!r}: labels must be 0 or 1")


def read_label_jsonl(path) -> list[LabelVector]:
    """Parse {"id", "labels", "label_set"} rows into LabelVectors."""
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append(
                LabelVector(row["id"], tuple(row["labels"]), row["label_set"])
            )
    return out


def _confusion(
    predictions: Sequence[LabelVector], references: Sequence[LabelVector]
) -> list[tuple[int, int, int]]:
    """Per-class (TP, FP, FN) over an id-matched batch."""
    if not predictions or not references:
        raise MetricsError("empty label batch")
    label_sets = {v.label_set for v in predictions} | {v.label_set for v in references}
    if len(label_sets) != 1:
        raise MetricsError(f"mixed label sets in batch: {sorted(label_sets)}")
    by_id = {r.id: r for r in references}
    if len(by_id) != len(references):
        raise MetricsError("duplicate ids in reference labels")
    pred_ids = [p.id for p in predictions]
    if len(set(pred_ids)) != len(pred_ids):
        raise MetricsError("duplicate ids in predicted labels")
    if set(pred_ids) != set(by_id):
        missing = sorted(set(pred_ids) ^ set(by_id))
        raise MetricsError(f"prediction/reference id mismatch: {missing[:5]}")
    arity = len(predictions[0].labels)
    counts = [[0, 0, 0] for _ in range(arity)]
    for pred in predictions:
        ref = by_id[pred.id]
        for cls in range(arity):
            p, r = pred.labels[cls], ref.labels[cls]
            if p == 1 and r == 1:
                counts[cls][0] += 1
            elif p == 1 and r == 0:
                counts[cls][1] += 1
            elif p == 0 and r == 1:
                counts[cls][2] += 1
    return [tuple(c) for c in counts]


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_labels(
    predictions: Sequence[LabelVector],
    references: Sequence[LabelVector],
    mode: str,
) -> float:
    """Micro (pooled counts) or macro (unweighted class mean) F1.

    A class with no true or predicted positives contributes an F1 of 0 to
    the macro mean.
    """
    if mode not in ("micro", "macro"):
        raise MetricsError(f"mode must be 'micro' or 'macro', got {mode!r}")
    confusion = _confusion(predictions, references)
    if mode == "micro":
        tp = sum(c[0] for c in confusion)
        fp = sum(c[1] for c in confusion)
        fn = sum(c[2] for c in confusion)
        return _f1(tp, fp, fn)
    return sum(_f1(*c) for c in confusion) / len(confusion)


@dataclass(frozen=True)
class PerImageMetrics:
    bleu1: float | None = None
    bleu4: float | None = None
    rouge_l: float | None = None
    concept_precision: float | None = None
    nnz: int | None = None
    recon_cosine: float | None = None

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "concept_precision": self.concept_precision,
            "nnz": self.nnz,
            "recon_cosine": self.recon_cosine,
        }


@dataclass(frozen=True)
class CorpusMetrics:
    bleu1: float | None = None
    bleu4: float | None = None
    rouge_l: float | None = None
    micro_f1: Mapping[str, float] = field(default_factory=dict)
    macro_f1: Mapping[str, float] = field(default_factory=dict)
    mean_precision: float | None = None
    mean_nnz: float | None = None
    mean_recon_cosine: float | None = None
    undefined_precision_count: int = 0
    no_reconstruction_count: int = 0

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "micro_f1": dict(self.micro_f1),
            "macro_f1": dict(self.macro_f1),
            "mean_precision": self.mean_precision,
            "mean_nnz": self.mean_nnz,
            "mean_recon_cosine": self.mean_recon_cosine,
            "undefined_precision_count": self.undefined_precision_count,
            "no_reconstruction_count": self.no_reconstruction_count,
        }


@dataclass(frozen=True)
class MetricsReport:
    """Per-image values plus corpus aggregates.

    Corpus BLEU and micro F1 pool counts; every other aggregate is a mean
    of the defined per-image values.
    """

    per_image: Mapping[str, PerImageMetrics]
    corpus: CorpusMetrics

    def to_json(self) -> str:
        payload = {
            "per_image": {k: v.to_dict() for k, v in self.per_image.items()},
            "corpus": self.corpus.to_dict(),
        }
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


CSV_COLUMNS = (
    "Micro-F1_14",
    "Micro-F1_5",
    "Macro-F1_14",
    "Macro-F1_5",
    "B-1",
    "B-4",
    "R-L",
)


def results_csv(report: MetricsReport) -> str:
    """Flat one-row CSV matching the result-table column layout."""
    corpus = report.corpus
    values = (
        corpus.micro_f1.get("chexbert14"),
        corpus.micro_f1.get("top5"),
        corpus.macro_f1.get("chexbert14"),
        corpus.macro_f1.get("top5"),
        corpus.bleu1,
        corpus.bleu4,
        corpus.rouge_l,
    )
    cells = ["" if v is None else repr(float(v)) for v in values]
    return ",".join(CSV_COLUMNS) + "\n" + ",".join(cells) + "\n"


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def evaluate_reports(
    generated: Mapping[str, str],
    references: Mapping[str, str],
    keywords: Mapping[str, Sequence[str]] | None = None,
    decompositions: Mapping[str, Mapping] | None = None,
    pred_labels: Sequence[LabelVector] = (),
    ref_labels: Sequence[LabelVector] = (),
    config: TextNormalizationConfig = DEFAULT_NORMALIZATION,
) -> MetricsReport:
    """Assemble a MetricsReport for a batch of generated reports.

    ``keywords`` maps id to the extracted bigrams (for concept precision,
    scored against the reference report); ``decompositions`` maps id to a
    row with optional "nnz" and "recon_cosine" fields, as emitted by the
    decompose step. Label batches may mix label sets across calls but not
    within one sequence.
    """
    ids = sorted(generated)
    if set(ids) - set(references):
        missing = sorted(set(ids) - set(references))
        raise MetricsError(f"references missing for ids: {missing[:5]}")

    per_image: dict[str, PerImageMetrics] = {}
    for record_id in ids:
        cand, ref = generated[record_id], references[record_id]
        precision = None
        if keywords is not None and record_id in keywords:
            precision = concept_precision(keywords[record_id], ref, config)
        nnz = recon = None
        if decompositions is not None and record_id in decompositions:
            row = decompositions[record_id]
            nnz = row.get("nnz")
            recon = row.get("recon_cosine")
        per_image[record_id] = PerImageMetrics(
            bleu1=bleu_n(cand, ref, 1),
            bleu4=bleu_n(cand, ref, 4),
            rouge_l=rouge_l(cand, ref),
            concept_precision=precision,
            nnz=nnz,
            recon_cosine=recon,
        )

    pairs = [(generated[i], references[i]) for i in ids]
    micro: dict[str, float] = {}
    macro: dict[str, float] = {}
    if pred_labels or ref_labels:
        for label_set in sorted({v.label_set for v in pred_labels}):
            preds = [v for v in pred_labels if v.label_set == label_set]
            refs = [v for v in ref_labels if v.label_set == label_set]
            micro[label_set] = f1_labels(preds, refs, "micro")
            macro[label_set] = f1_labels(preds, refs, "macro")

    precisions = [
        m.concept_precision
        for m in per_image.values()
        if m.concept_precision is not None
    ]
    undefined = sum(
        1
        for m in per_image.values()
        if keywords is not None and m.concept_precision is None
    )
    nnzs = [float(m.nnz) for m in per_image.values() if m.nnz is not None]
    recons = [m.recon_cosine for m in per_image.values() if m.recon_cosine is not None]
    no_recon = sum(
        1
        for m in per_image.values()
        if decompositions is not None and m.nnz is not None and m.recon_cosine is None
    )

    corpus = CorpusMetrics(
        bleu1=corpus_bleu_n(pairs, 1) if pairs else None,
        bleu4=corpus_bleu_n(pairs, 4) if pairs else None,
        rouge_l=_mean([m.rouge_l for m in per_image.values()]),
        micro_f1=micro,
        macro_f1=macro,
        mean_precision=_mean(precisions),
        mean_nnz=_mean(nnzs),
        mean_recon_cosine=_mean(recons),
        undefined_precision_count=undefined,
        no_reconstruction_count=no_recon,
    )
    return MetricsReport(per_image=per_image, corpus=corpus)
