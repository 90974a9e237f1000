"""Exception types shared across the package."""


class CemragError(Exception):
    """Base class for all errors raised by this package."""


class StoreError(CemragError):
    """Embedding store ingestion, persistence, or query failure."""


class VocabError(CemragError):
    """Vocabulary construction or normalization config failure."""


class SpliceError(CemragError):
    """Concept dictionary or sparse decomposition failure."""


class PromptError(CemragError):
    """Prompt spec validation failure."""


class GenerationError(CemragError):
    """Text-generation request failure (transport, protocol, or content)."""


class MetricsError(CemragError):
    """Metric computation failure (mismatched ids, arities, empty batches)."""


class PipelineError(CemragError):
    """End-to-end run failure; partial traces are preserved before raising."""
