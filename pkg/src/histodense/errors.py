"""Exception hierarchy shared by the pipeline modules."""


class PipelineError(Exception):
    """Base class for domain errors; the CLI maps these to exit code 1."""


class ParseError(PipelineError):
    """Malformed input document (bad JSON, missing keys, wrong types)."""


class ValidationError(PipelineError):
    """Structurally sound input that violates a documented invariant."""


class ShapeError(ValidationError):
    """Array shape or dtype does not match the operation's contract."""


class ShortfallError(ValidationError):
    """A sampling pool is too small to satisfy the requested counts."""


class TrainingError(PipelineError):
    """Training aborted (non-finite loss, unreadable patch)."""
