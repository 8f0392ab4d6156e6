"""Exception hierarchy. Each failure class carries the CLI exit code."""


class ZsnerError(Exception):
    """Base for all toolkit errors."""

    exit_code = 1


class ConfigError(ZsnerError):
    """Bad or inconsistent configuration, pre-flight validation failures."""

    exit_code = 2


class AssemblyError(ConfigError):
    """Benchmark assembly produced an invalid benchmark (e.g. empty tier)."""


class RenderError(ConfigError):
    """Prompt rendering impossible for the requested variant/template."""


class RunDirectoryError(ConfigError):
    """Run directory already populated and overwrite was not requested."""


class CacheError(ConfigError):
    """Response cache directory cannot be created or written."""


class InputFormatError(ZsnerError):
    """Malformed input file (BIO corpus, dataset, store, reply archive)."""

    exit_code = 3


class BioParseError(InputFormatError):
    """Malformed BIO line; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DatasetFormatError(InputFormatError):
    """Malformed dataset JSONL record."""


class StoreFormatError(InputFormatError):
    """Malformed guideline store file."""


class DGFormatError(InputFormatError):
    """Reply could not be split into definition + guidelines sections."""

    def __init__(self, message: str, raw_reply: str = ""):
        super().__init__(message)
        self.raw_reply = raw_reply


class EncodingAlignmentError(InputFormatError):
    """Mention does not align to token boundaries during BIO encoding."""


class CoverageError(ZsnerError):
    """Predictions do not cover the benchmark's (document, tag) grid."""

    exit_code = 4


class ComparisonError(CoverageError):
    """Two reports do not share the same benchmark/tag grid."""


class PairingError(ZsnerError):
    """CompletionRecord paired with the wrong PromptJob, or duplicate cell."""


class ExpansionError(ZsnerError):
    """Job expansion failed (duplicate document ids)."""


class AuthError(ZsnerError):
    """Backend auth token unresolvable before any request was made."""

    exit_code = 5


class GenerationError(ZsnerError):
    """Definition/guidelines generation failed after retries."""
