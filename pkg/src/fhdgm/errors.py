"""Exception hierarchy shared by all fhdgm modules."""


class FhdgmError(Exception):
    """Base class for every error raised by the package."""


class ParseError(FhdgmError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DomainError(FhdgmError, ValueError):
    pass


class DuplicationError(FhdgmError):
    pass


class CovariateMissingError(FhdgmError):
    pass


class SiteLookupError(FhdgmError, LookupError):
    pass


class SplitError(FhdgmError, ValueError):
    pass


class UnitError(FhdgmError, ValueError):
    pass


class DegeneracyError(FhdgmError, ValueError):
    pass


class BuildError(FhdgmError, ValueError):
    pass


class InitializationError(FhdgmError):
    pass


class NumericalError(FhdgmError, ArithmeticError):
    pass


class ConditioningError(NumericalError):
    def __init__(self, message: str, min_eigenvalue: float | None = None):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message)


class ChiSquareTestError(FhdgmError):
    pass


class UsageError(FhdgmError):
    """Bad command-line usage or configuration."""
