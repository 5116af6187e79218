"""Exception hierarchy.

Data problems derive from :class:`DataError` and numerical failures from
:class:`NumericalError`; the CLI maps these to distinct exit codes.
"""


class MtlsiError(Exception):
    """Base class for all package errors."""


class DataError(MtlsiError, ValueError):
    pass


class NumericalError(MtlsiError, ArithmeticError):
    pass


class ShapeMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, path, row, column, value):
        self.path, self.row, self.column, self.value = path, row, column, value
        super().__init__(f"{path}: non-numeric cell {value!r} at row {row}, column {column}")


class MissingFile(DataError, FileNotFoundError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"missing file: {path}")


class EmptySelection(DataError):
    pass


class InconsistentSigns(DataError):
    pass


class RankDeficient(DataError):
    def __init__(self, task, columns):
        self.task, self.columns = task, list(columns)
        super().__init__(f"task {task}: selected columns {self.columns} are collinear")


class DegreesOfFreedomExhausted(DataError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message, iterate=None, residual=None, history=None):
        self.iterate, self.residual, self.history = iterate, residual, history
        super().__init__(message)


class KktViolation(NumericalError):
    def __init__(self, residual, tol):
        self.residual = residual
        super().__init__(f"KKT residual {residual:.3e} exceeds {10 * tol:.3e}")


class SingularDelta(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"matrix {name} is not positive definite")


class InfeasibleStart(NumericalError):
    pass
