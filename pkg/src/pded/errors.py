"""Exception hierarchy shared across the package."""


class PdedError(Exception):
    """Base class for all package errors."""


# -- expressions -------------------------------------------------------------

class ParseError(PdedError, ValueError):
    pass


class UnknownSymbol(ParseError):
    pass


class IncompleteExpression(ParseError):
    pass


class TrailingTokens(ParseError):
    pass


class InvalidDerivativeChild(ParseError):
    pass


# -- surrogate ---------------------------------------------------------------

class DimensionMismatch(PdedError, ValueError):
    pass


class UnsupportedVariable(PdedError, ValueError):
    pass


class NonFiniteResidual(PdedError, ArithmeticError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DivergedLoss(PdedError, ArithmeticError):
    pass


# -- term evaluation ---------------------------------------------------------

class NonFiniteColumn(PdedError, ArithmeticError):
    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class AllTermsEliminated(PdedError):
    pass


class SingularSystem(PdedError, ArithmeticError):
    pass


# -- search / selection ------------------------------------------------------

class EmptyBank(PdedError):
    pass


class DegenerateSubset(PdedError, ArithmeticError):
    pass


# -- data --------------------------------------------------------------------

class UnstableSolve(PdedError, ArithmeticError):
    pass


class TooManyRequested(PdedError, ValueError):
    pass


class DatasetFormatError(PdedError, ValueError):
    pass


# -- metrics -----------------------------------------------------------------

class SupportMismatch(PdedError):
    pass


class GridMismatch(PdedError, ValueError):
    pass


class DerivativeOrderExceeded(PdedError, ArithmeticError):
    """A term needs a higher derivative than the field snapshot provides."""
