"""Exception types shared across the package.

Every error the library raises deliberately derives from ComposluError so
the CLI can map failure kinds to distinct exit codes.
"""


class ComposluError(Exception):
    """Base class for all library errors."""


class ShapeError(ComposluError):
    """Array dimensions disagree with an operation's contract."""


class ConfigError(ComposluError):
    """Invalid configuration value or unparseable config file."""


class VocabError(ComposluError):
    """Token or tag symbol outside the known vocabulary."""


class AlignError(ComposluError):
    """Tag sequence length disagrees with its tokenization."""


class SpanError(ComposluError):
    """Invalid entity span list (out of range or overlapping)."""


class DataError(ComposluError):
    """Corpus or checkpoint file is missing, truncated, or inconsistent."""


class LengthError(ComposluError):
    """Sequence exceeds a configured maximum length."""


class CorrelationError(ComposluError):
    """Correlation is undefined because one variate has zero variance."""
