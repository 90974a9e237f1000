"""Deterministic prompt assembly for the four prompting strategies.

Each strategy renders to exact bytes so runs are reproducible and golden
tests can pin the output. The three instruction sentences are fixed; the
section labels and separators are this project's canonical rendering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import PromptError
from .splice import ConceptSet

INSTRUCTION = "Provide a description of the findings in the radiology image"
TASK = (
    "Write the report of the radiology image taking information from similar "
    "FINDINGS. Consider as more relevant sentences that contain any of the "
    "KEYWORDS in the FINDINGS"
)
FINAL_INSTRUCTION = (
    "Write a paragraph with only the report relying in detail on the FINDINGS"
)

STRATEGIES = ("image_only", "concepts", "rag", "cemrag")


class DegradedPromptWarning(UserWarning):
    """Raised when an empty keyword set downgrades cemrag to a rag layout."""


@dataclass(frozen=True)
class PromptSpec:
    """Inputs for one prompt build.

    Strategy-required fields must be present and forbidden fields absent:
    image_only carries neither keywords nor reports, concepts carries only
    keywords, rag only reports, cemrag both.
    """

    strategy: str
    keywords: ConceptSet | None = None
    retrieved_reports: tuple[str, ...] | None = None
    template_overrides: Mapping[str, str] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PromptError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        needs_keywords = self.strategy in ("concepts", "cemrag")
        needs_reports = self.strategy in ("rag", "cemrag")
        if needs_keywords and self.keywords is None:
            raise PromptError(f"strategy {self.strategy!r} requires keywords")
        if not needs_keywords and self.keywords is not None:
            raise PromptError(f"strategy {self.strategy!r} forbids keywords")
        if needs_reports and not self.retrieved_reports:
            raise PromptError(f"strategy {self.strategy!r} requires retrieved reports")
        if not needs_reports and self.retrieved_reports:
            raise PromptError(f"strategy {self.strategy!r} forbids retrieved reports")
        if self.strategy == "concepts" and len(self.keywords) == 0:
            raise PromptError("strategy 'concepts' requires a non-empty keyword set")

    def _template(self, key: str, default: str) -> str:
        if self.template_overrides and key in self.template_overrides:
            return self.template_overrides[key]
        return default


def _keywords_block(keywords: ConceptSet) -> str:
    lines = "".join(f"- {term}\n" for term in keywords.terms)
    return f"KEYWORDS:\n{lines}"


def _findings_block(reports: Sequence[str]) -> str:
    entries = [f"FINDINGS {i}:\n{report}\n" for i, report in enumerate(reports, start=1)]
    return "---\n".join(entries)


def build_prompt(spec: PromptSpec) -> str:
    """Render a PromptSpec to its exact prompt text.

    A cemrag spec whose keyword set is empty (an all-zero decomposition)
    degrades to the rag layout and emits a DegradedPromptWarning.
    """
    instruction = spec._template("instruction", INSTRUCTION)
    task = spec._template("task", TASK)
    final_instruction = spec._template("final_instruction", FINAL_INSTRUCTION)

    strategy = spec.strategy
    if strategy == "cemrag" and len(spec.keywords) == 0:
        warnings.warn(
            "empty keyword set: degrading cemrag prompt to rag layout",
            DegradedPromptWarning,
            stacklevel=2,
        )
        strategy = "rag"

    if strategy == "image_only":
        return instruction
    if strategy == "concepts":
        return instruction + "\n" + _keywords_block(spec.keywords)
    if strategy == "rag":
        return instruction + "\n" + _findings_block(spec.retrieved_reports)
    return (
        task
        + "\n"
        + _keywords_block(spec.keywords)
        + _findings_block(spec.retrieved_reports)
        + final_instruction
    )
