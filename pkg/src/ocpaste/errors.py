"""Error taxonomy shared by the library and the CLI.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class OcpasteError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(OcpasteError):
    """Malformed input document (bad JSON, wrong top-level shape)."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ValidationError(OcpasteError):
    """Structurally valid input that violates dataset semantics."""


class CodecError(ValidationError):
    """Inconsistent mask encoding (run sums, negative runs, size mismatch)."""


class ConfigError(OcpasteError):
    """Bad augmentation configuration value or unknown preset."""
