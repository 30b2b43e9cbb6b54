"""
Custom exceptions for the application
"""
from pathlib import Path
from typing import Optional, Sequence


class ScenException(Exception):
    """Base exception for the SCEN toolkit"""
    pass


class ShapeError(ScenException):
    """Raised when operand shapes do not conform for an op"""

    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class DatasetError(ScenException):
    """Raised when a dataset violates a structural constraint"""
    pass


class BundleFormatError(DatasetError):
    """Raised when a metadata or features file cannot be parsed"""

    def __init__(self, path: Path, offset: int, message: str, unit: str = "byte"):
        self.path = Path(path)
        self.offset = offset
        self.unit = unit
        super().__init__(f"{self.path} ({unit} {offset}): {message}")


class CheckpointError(ScenException):
    """Raised when a checkpoint is malformed or does not fit the data"""
    pass


class ConfigurationError(ScenException):
    """Raised when run configuration is inconsistent"""
    pass


class OutputExistsError(ScenException):
    """Raised when a command would overwrite existing output"""
    pass


class NumericalError(ScenException):
    """Raised when a loss term turns non-finite during training"""

    def __init__(self, term: str, value: Optional[float] = None, epoch: Optional[int] = None):
        self.term = term
        self.value = value
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"Non-finite value in {term}{where}: {value}")
