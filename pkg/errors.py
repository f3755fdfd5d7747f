"""
Error definitions v1.0
Wasserstein DRMDP certification toolkit
Exception hierarchy shared by the solvers and the orchestration layer
"""

from typing import Optional


class WdrmdpError(Exception):
    """Base class for every error raised by the toolkit"""

    # Name of the module that raised the error, used in CLI provenance
    origin: str = "wdrmdp"

    def __init__(self, message: str, origin: Optional[str] = None):
        super().__init__(message)
        if origin is not None:
            self.origin = origin

    def describe(self) -> str:
        return f"[{self.origin}] {self}"


class StructuralError(WdrmdpError, ValueError):
    """Dimension mismatch, out-of-range index, rank deficiency, infeasible set"""


class ParameterError(WdrmdpError, ValueError):
    """Numeric parameter outside its admissible range"""


class UnsupportedParameterError(ParameterError):
    """Parameter combination the toolkit deliberately does not handle"""


class OracleRefusalError(WdrmdpError):
    """Brute-force oracle refused an instance above its size guard"""


class ConfigError(WdrmdpError):
    """
    Configuration parse or validation failure

    Args:
        message: what is wrong
        field: dotted path of the offending field, if known
        line: 1-based line number in the config file, if known
    """

    origin = "config"

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def describe(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(f"field '{self.field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        return f"[{self.origin}] {prefix}{self}"
