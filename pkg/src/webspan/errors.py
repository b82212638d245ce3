"""Exception types shared across the package."""
from __future__ import annotations


class WebspanError(Exception):
    """Base class; the CLI maps these to nonzero exit codes."""


class EmptyDocument(WebspanError):
    """Document has no extractable text after parsing/pruning."""


class ParseError(WebspanError):
    """Malformed dataset record; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDataset(WebspanError):
    """Dataset with zero usable records."""


class InvalidGold(WebspanError):
    """Gold answer unusable for scoring (e.g. empty after tokenization)."""


class ShapeError(WebspanError):
    """Array shape mismatch; names both offending shapes."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")


class StaleTapeError(WebspanError):
    """backward() called twice on the same tape without a reset."""


class ConfigError(WebspanError):
    """Invalid configuration value."""


class VocabError(WebspanError):
    """Token id out of range for an embedding table."""


class LabelError(WebspanError):
    """Gold span violates the span invariants (order, node, length)."""


class CorruptCheckpoint(WebspanError):
    """Checkpoint blob does not match its manifest."""


class VocabHashError(WebspanError):
    """Vocabulary does not match the one a checkpoint was trained with."""


class DataQualityError(WebspanError):
    """Too many pages or examples were skipped while building a dataset."""
