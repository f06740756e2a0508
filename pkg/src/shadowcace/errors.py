"""Exception hierarchy.

Errors split into two families so the command line can map them to exit
codes: :class:`DataError` (bad input, exit 2) and :class:`NumericalError`
(a computation that cannot be completed, exit 3).
"""


class ShadowCaceError(Exception):
    """Base class for all package errors."""


class DataError(ShadowCaceError, ValueError):
    pass


class NumericalError(ShadowCaceError, ArithmeticError):
    pass


# -- input validation -------------------------------------------------------
class EmptyData(DataError):
    pass


class MissingnessMismatch(DataError):
    pass


class NonBinaryField(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class InvalidLaw(DataError):
    pass


class InvalidConfig(DataError):
    pass


# -- discrete identification -----------------------------------------------
class ZeroMargin(DataError):
    pass


class ZeroDensity(DataError):
    pass


class ShadowViolation(DataError):
    pass


class DegenerateConditional(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class UnderdeterminedSystem(NumericalError):
    pass


class NegativeSolution(NumericalError):
    pass


class ZeroReference(NumericalError):
    pass


class NormalizationFailure(NumericalError):
    pass


# -- estimation --------------------------------------------------------------
class DegenerateDesign(DataError):
    pass


class EmptyStratum(DataError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class SingularWeight(NumericalError):
    pass


class RankDeficientH(NumericalError):
    pass


class WeakInstrument(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class AllReplicatesFailed(NumericalError):
    pass


class ExcessiveNonConvergence(NumericalError):
    pass
