"""Exception types shared across the package."""


class SthSepError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SthSepError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, left, right, detail: str = ""):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        msg = f"{op}: incompatible shapes {self.left} and {self.right}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConfigError(SthSepError, ValueError):
    """A configuration value violates its documented constraints."""


class DataError(SthSepError, ValueError):
    """Input files are malformed or inconsistent.

    ``line`` is the 1-based line number in ``path`` when known.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SplitError(DataError):
    """A chronological split is too short for the requested windows."""


class CheckpointError(SthSepError, ValueError):
    """Checkpoint file is corrupt or does not match the model configuration."""


class TrainingError(SthSepError, RuntimeError):
    """Training diverged (non-finite loss)."""
