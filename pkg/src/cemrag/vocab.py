"""Concept vocabulary construction from report corpora.

Builds the bigram vocabulary used for concept decomposition: reports are
lowercased, punctuation-stripped, stopword/acronym-filtered and lemmatized,
then adjacent token pairs are counted across the corpus and the most
frequent bigrams are kept.
"""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ._stopwords import DEFAULT_STOPWORDS
from .errors import VocabError

# Acronyms commonly spelled out in chest radiograph reports that would
# otherwise surface as high-frequency bigram halves.
DEFAULT_ACRONYM_EXCLUSIONS = frozenset({"ap", "pa", "ct", "ij", "svc", "cabg"})

# Irregular plurals and inflections the suffix heuristics would mangle.
DEFAULT_LEMMA_TABLE: Mapping[str, str] = {
    "apices": "apex",
    "atelectases": "atelectasis",
    "bases": "base",
    "bronchi": "bronchus",
    "calculi": "calculus",
    "diagnoses": "diagnosis",
    "effusions": "effusion",
    "emboli": "embolus",
    "foci": "focus",
    "hila": "hilum",
    "lumina": "lumen",
    "metastases": "metastasis",
    "opacities": "opacity",
    "pneumothoraces": "pneumothorax",
    "thoraces": "thorax",
    "vertebrae": "vertebra",
}

_PUNCT_RE = re.compile(r"[^\w\s]|_")
_SENTENCE_RE = re.compile(r"[.;\n]")


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace.

    This is the raw tokenizer shared with the text metrics; it applies no
    stopword filtering or lemmatization.
    """
    return _PUNCT_RE.sub(" ", text.lower()).split()


def split_sentences(text: str) -> list[str]:
    """Split on period, semicolon, and newline.

    Bigram adjacency never crosses these boundaries; tokens separated only
    by other punctuation (commas, slashes) remain adjacent.
    """
    return _SENTENCE_RE.split(text)


def _suffix_lemma(token: str) -> str:
    """Deterministic fallback de-pluralization for tokens not in the table."""
    if len(token) >= 5 and token.endswith("ies"):
        return token[:-3] + "y"
    if token.endswith("es") and len(token) - 2 >= 3:
        stem = token[:-2]
        if stem.endswith(("s", "x", "z", "ch", "sh")):
            return stem
    if (
        token.endswith("s")
        and not token.endswith(("ss", "us", "is"))
        and len(token) - 1 >= 3
    ):
        return token[:-1]
    return token


def _lemmatize(token: str, table: Mapping[str, str]) -> str:
    """Apply table lookups and suffix rules until a fixed point is reached."""
    seen = {token}
    while True:
        nxt = table.get(token) or _suffix_lemma(token)
        if nxt == token:
            return token
        if nxt in seen:  # cycle guard; config validation should prevent this
            return nxt
        seen.add(nxt)
        token = nxt


@dataclass(frozen=True)
class TextNormalizationConfig:
    """Stopword, acronym, and lemma tables driving text normalization.

    All entries must be lowercase and every lemma-table value must be a
    fixed point of the full lemmatizer (lemma of a lemma is itself).
    """

    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    acronym_exclusions: frozenset[str] = DEFAULT_ACRONYM_EXCLUSIONS
    lemma_table: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_LEMMA_TABLE)
    )

    def __post_init__(self):
        for name, entries in (
            ("stopwords", self.stopwords),
            ("acronym_exclusions", self.acronym_exclusions),
        ):
            for entry in entries:
                if entry != entry.lower():
                    raise VocabError(f"{name} entry {entry!r} is not lowercase")
        for key, value in self.lemma_table.items():
            if key != key.lower() or value != value.lower():
                raise VocabError(f"lemma_table entry {key!r} -> {value!r} is not lowercase")
        for key, value in self.lemma_table.items():
            fixed = _lemmatize(value, self.lemma_table)
            if fixed != value:
                raise VocabError(
                    f"lemma_table value {value!r} (for {key!r}) is not a fixed "
                    f"point: lemmatizes to {fixed!r}"
                )

    @property
    def removed(self) -> frozenset[str]:
        return self.stopwords | self.acronym_exclusions


DEFAULT_NORMALIZATION = TextNormalizationConfig()


def normalize_text(
    text: str, config: TextNormalizationConfig = DEFAULT_NORMALIZATION
) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords/acronyms, lemmatize.

    The stopword/acronym filter runs again after lemmatization so the
    function is idempotent on its own output even when a lemma lands on a
    filtered token.
    """
    removed = config.removed
    kept = (t for t in tokenize(text) if t not in removed)
    lemmas = (_lemmatize(t, config.lemma_table) for t in kept)
    return [t for t in lemmas if t not in removed]


def extract_bigrams(
    corpus: Iterable[str], config: TextNormalizationConfig = DEFAULT_NORMALIZATION
) -> list[tuple[str, int]]:
    """Count adjacent post-normalization token pairs across a corpus.

    Adjacency is computed after filtering (deleting a stopword joins its
    neighbours) but never across sentence boundaries. Result is sorted by
    count descending, then term ascending; document order is irrelevant.
    """
    counts: Counter[str] = Counter()
    for document in corpus:
        for sentence in split_sentences(document):
            tokens = normalize_text(sentence, config)
            for left, right in zip(tokens, tokens[1:]):
                counts[f"{left} {right}"] += 1
    return sorted(counts.items(), key=lambda item: (-item[1], item[0]))


@dataclass(frozen=True)
class Vocabulary:
    """Ranked bigram vocabulary with corpus frequencies."""

    terms: tuple[str, ...]
    frequencies: tuple[int, ...]

    def __post_init__(self):
        if len(self.terms) != len(self.frequencies):
            raise VocabError("terms and frequencies length mismatch")
        if len(set(self.terms)) != len(self.terms):
            raise VocabError("vocabulary terms are not unique")
        for term in self.terms:
            if len(term.split(" ")) != 2:
                raise VocabError(f"term {term!r} is not a two-token bigram")
        ranked = sorted(
            zip(self.terms, self.frequencies), key=lambda tc: (-tc[1], tc[0])
        )
        if tuple(t for t, _ in ranked) != self.terms:
            raise VocabError("terms not ordered by frequency desc, term asc")

    @property
    def m(self) -> int:
        return len(self.terms)

    def rank(self, term: str) -> int:
        """0-based rank of a term; raises KeyError for unknown terms."""
        try:
            return self._rank_index[term]
        except AttributeError:
            index = {t: i for i, t in enumerate(self.terms)}
            object.__setattr__(self, "_rank_index", index)
            return index[term]

    def prefix(self, m: int) -> "Vocabulary":
        """The top-m sub-vocabulary (ranking is a total order, so this is a prefix)."""
        if not 1 <= m <= self.m:
            raise VocabError(f"prefix size {m} out of range 1..{self.m}")
        return Vocabulary(self.terms[:m], self.frequencies[:m])

    def write_tsv(self, path: str | Path) -> None:
        lines = [f"{t}\t{c}\n" for t, c in zip(self.terms, self.frequencies)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def read_tsv(cls, path: str | Path) -> "Vocabulary":
        terms, counts = [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            term, _, count = line.partition("\t")
            terms.append(term)
            counts.append(int(count))
        return cls(tuple(terms), tuple(counts))


def build_vocabulary(
    corpus: Iterable[str],
    m: int,
    config: TextNormalizationConfig = DEFAULT_NORMALIZATION,
) -> Vocabulary:
    """Top-m bigrams under extract_bigrams ordering.

    Truncates with a warning when the corpus yields fewer than m distinct
    bigrams.
    """
    if m <= 0:
        raise VocabError(f"vocabulary size must be positive, got {m}")
    ranked = extract_bigrams(corpus, config)
    if len(ranked) < m:
        warnings.warn(
            f"corpus yields only {len(ranked)} distinct bigrams; "
            f"truncating vocabulary from requested {m}",
            stacklevel=2,
        )
    top = ranked[:m]
    return Vocabulary(tuple(t for t, _ in top), tuple(c for _, c in top))


def read_wordlist(path: str | Path) -> frozenset[str]:
    """One token per line; blank lines and #-comments ignored."""
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.add(line)
    return frozenset(entries)


def read_lemma_table(path: str | Path) -> dict[str, str]:
    """token<TAB>lemma per line; blank lines and #-comments ignored."""
    table = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        token, _, lemma = line.partition("\t")
        if not lemma:
            raise VocabError(f"lemma file line {line!r} is not token<TAB>lemma")
        table[token] = lemma
    return table
