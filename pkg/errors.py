"""
Error hierarchy for the PHASE toolkit.
Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional


class PhaseError(Exception):
    """Base class. exit_code is what main.py returns to the shell."""
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(PhaseError):
    exit_code = 1


class DataError(PhaseError):
    exit_code = 2


class ZeekHeaderError(DataError):
    """Malformed '#' directive block in a Zeek TSV log."""

    def __init__(self, detail: str, line_no: Optional[int] = None):
        if line_no is not None:
            detail = f"line {line_no}: {detail}"
        super().__init__(detail)
        self.line_no = line_no


class ManifestError(DataError):
    pass


class ShapeError(DataError):
    pass


class CodecError(DataError):
    pass


class ModelFileError(DataError):
    pass


class StratificationError(DataError):
    pass


class NumericalError(PhaseError):
    """Non-finite values in tensors, gradients or losses."""
    exit_code = 3
