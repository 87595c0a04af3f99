"""Exception hierarchy shared by every stage of the pipeline."""
from typing import Iterable


class LifelongDiffusionError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(LifelongDiffusionError, ValueError):
    """Invalid or unknown configuration value."""

    exit_code = 2

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class MissingArtifactError(LifelongDiffusionError, FileNotFoundError):
    """A file or directory produced by an earlier stage is missing."""

    exit_code = 3

    def __init__(self, path: object, message: str = "missing artifact") -> None:
        super().__init__(f"{message}: {path}")
        self.path = path


class TrainingFailureError(LifelongDiffusionError, RuntimeError):
    """Optimisation did not make progress."""

    exit_code = 4


class DimensionError(LifelongDiffusionError, ValueError):
    """Tensor shapes do not agree."""


class RangeError(LifelongDiffusionError, ValueError):
    """A count or index is outside its permitted range."""


class EmptyInputError(LifelongDiffusionError, ValueError):
    """An operation received an empty batch or set."""


class EmptyPromptError(LifelongDiffusionError, ValueError):
    """A prompt contained no tokens."""


class UnknownTokenError(LifelongDiffusionError, KeyError):
    """A prompt used words outside the registered vocabulary."""

    def __init__(self, tokens: Iterable[str]) -> None:
        self.tokens = list(tokens)
        super().__init__(f"unknown tokens: {', '.join(self.tokens)}")

    def __str__(self) -> str:
        return str(self.args[0])


class MissingPriorError(LifelongDiffusionError, ValueError):
    """A prior-preservation weight is set but no prior batch was given."""


class MissingTeacherError(LifelongDiffusionError, ValueError):
    """Distillation was requested without a teacher snapshot."""


class SnapshotError(LifelongDiffusionError, ValueError):
    """A model under training was passed where a frozen snapshot is required."""


class SequencingError(LifelongDiffusionError, ValueError):
    """Tasks were presented out of order."""


class DuplicateTaskError(LifelongDiffusionError, ValueError):
    """A task was inserted into a memory bank twice."""


class IntegrityError(LifelongDiffusionError, ValueError):
    """A stored artifact failed its integrity check."""

    def __init__(self, record: object, message: str) -> None:
        super().__init__(f"record {record}: {message}")
        self.record = record


class EmptyTargetError(LifelongDiffusionError, ValueError):
    """A guidance loss has no target tokens."""


class PairingError(LifelongDiffusionError, ValueError):
    """A personalized token has no concept token to pair with."""


class UndefinedMetricError(LifelongDiffusionError, ValueError):
    """A metric is not defined for the requested arguments."""


class IncompleteMatrixError(LifelongDiffusionError, KeyError):
    """An alignment matrix is missing required entries."""

    def __str__(self) -> str:
        return str(self.args[0])


class CoverageError(LifelongDiffusionError, ValueError):
    """A training corpus does not cover the required vocabulary."""
