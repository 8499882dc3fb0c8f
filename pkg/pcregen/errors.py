"""
Errors - Exception hierarchy shared by every pcregen module
"""

from typing import Optional


class RegistrationError(Exception):
    """Base class for all pcregen failures"""


class InvalidGeometry(RegistrationError, ValueError):
    """A container was built with values that break its invariants"""


class DegenerateInput(RegistrationError):
    """Too few or collinear pairs to fit a rigid transform"""


class EmptyCloud(RegistrationError):
    """A query was issued against an empty point cloud"""


class TooFewPoints(RegistrationError):
    """A cloud is too small for the requested operation"""


class DimensionMismatch(RegistrationError, ValueError):
    """Feature vectors of different dimensions were compared"""


class EmptySet(RegistrationError):
    """A feature set with no vectors was passed to a matcher"""


class TooFewConsistent(RegistrationError):
    """Fewer than three correspondences have mutual support"""


class EmptyInput(RegistrationError):
    """An operation needing correspondences received none"""


class PipelineCollapse(RegistrationError):
    """No local region survived correction during a stage"""

    def __init__(self, stage: int, message: str = ""):
        self.stage = stage
        super().__init__(message or f"no region survived local correction at stage {stage}")


class EmptyDataset(RegistrationError):
    """Dataset metrics were requested over zero pairs"""


class InvalidSpec(RegistrationError, ValueError):
    """A synthetic scene or benchmark specification is out of range"""


class ConfigError(RegistrationError, ValueError):
    """A run configuration failed parsing or validation"""


class UnsupportedFormat(RegistrationError):
    """A file format (or variant) the loaders do not handle"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(message)


class ParseError(RegistrationError):
    """
    A file could not be parsed

    Args:
        message: What went wrong
        path: File being parsed
        line: 1-based line number of the offending line, if known
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
