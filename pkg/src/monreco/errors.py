"""Exception hierarchy.

Every error carries a module-qualified ``code`` so the CLI can report
failures in a machine-readable way.
"""

from __future__ import annotations


class MonrecoError(Exception):
    """Base class for all package errors."""

    module = "monreco"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# ingest
class ParseError(MonrecoError):
    module = "ingest"

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class SchemaVersionError(MonrecoError):
    module = "ingest"


class ValidationError(MonrecoError):
    module = "ingest"

    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(f"{v.rule}({v.service_id})" for v in self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            summary += f"; ... {more} more"
        super().__init__(f"dataset failed validation: {summary}")


# stats
class DomainError(MonrecoError, ValueError):
    module = "stats"


class LengthMismatch(MonrecoError, ValueError):
    module = "stats"


class DegenerateExpected(MonrecoError, ValueError):
    module = "stats"


# cf_baseline
class DimensionMismatch(MonrecoError, ValueError):
    module = "cf"


class UnknownService(MonrecoError, KeyError):
    module = "cf"


class UnknownNeighbor(MonrecoError, KeyError):
    module = "cf"


class EmptyTestSet(MonrecoError):
    module = "cf"


class ClassAbsentFromTraining(MonrecoError):
    module = "cf"


# evalkit
class SingleClassError(MonrecoError, ValueError):
    module = "evalkit"


class NoPositiveLabels(MonrecoError, ValueError):
    module = "evalkit"


# protonet
class DivergenceError(MonrecoError, FloatingPointError):
    module = "protonet"

    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class ModelNotFound(MonrecoError, FileNotFoundError):
    module = "protonet"


# svd_ablation
class ConvergenceError(MonrecoError):
    module = "svd"


# synth
class ConfigError(MonrecoError, ValueError):
    module = "synth"
