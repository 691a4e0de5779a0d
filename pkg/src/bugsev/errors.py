"""Exception hierarchy shared across the package."""


class BugsevError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(BugsevError):
    """Input file is missing a required column."""

    def __init__(self, column: str):
        super().__init__(f"missing required column: {column}")
        self.column = column


class RowError(BugsevError):
    """A data row could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnmappedLabelError(BugsevError):
    def __init__(self, value: str):
        super().__init__(f"severity label not in policy: {value!r}")
        self.value = value


class DegenerateError(BugsevError):
    """Labels or a split leave one class empty."""


class StratificationError(BugsevError):
    pass


class ConfigError(BugsevError):
    pass


class FitError(BugsevError):
    pass


class PredictError(BugsevError):
    pass


class EvaluationError(BugsevError):
    pass


class ArtifactError(BugsevError):
    pass


class ChecksumError(ArtifactError):
    pass


class VersionError(ArtifactError):
    pass
