"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: contract and numeric problems exit 1,
unreadable or malformed input files exit 2.
"""


class CieaError(Exception):
    """Base class for every error raised deliberately by this package."""


class ContractError(CieaError, ValueError):
    """A caller violated a documented precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class ReferentialError(ContractError):
    """A record refers to an ID that does not exist, or an ID is duplicated."""


class NumericError(CieaError, ArithmeticError):
    """NaN or infinite values appeared where finite ones are required."""


class TapeStateError(CieaError, RuntimeError):
    """The gradient tape was used out of order (e.g. backward twice)."""


class ParseError(CieaError, ValueError):
    """An input file line could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")
