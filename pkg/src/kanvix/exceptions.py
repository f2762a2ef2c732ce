"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: configuration problems
(1), bad or missing data (2) and numerical failures (3).
"""


class KanvixError(Exception):
    exit_code = 3


class ConfigError(KanvixError):
    exit_code = 1


class DataError(KanvixError):
    exit_code = 2


class NumericalError(KanvixError, ArithmeticError):
    exit_code = 3


# --- spline / network -------------------------------------------------------

class DegenerateDomain(NumericalError, ValueError):
    """Grid domain has lower >= upper."""


class OrderTooLow(NumericalError, ValueError):
    """Derivative requested for a piecewise-constant basis."""


class ShapeMismatch(DataError, ValueError):
    pass


class EmptyBatch(DataError, ValueError):
    pass


class ZeroNorm(NumericalError):
    """Entropy of a layer whose edges are all identically zero."""


class NonFiniteObjective(NumericalError):
    pass


class AllPruned(NumericalError):
    """Pruning disconnected the output node."""


class NonAffineEdge(NumericalError, ValueError):
    pass


class DegenerateSamples(NumericalError, ValueError):
    pass


class MissingFeature(DataError, KeyError):
    pass


# --- data --------------------------------------------------------------------

class ParseError(DataError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DuplicateDate(DataError, ValueError):
    def __init__(self, date):
        super().__init__(f"duplicate date {date}")
        self.date = date


class InsufficientHistory(DataError, ValueError):
    pass


class EmptySegment(DataError, ValueError):
    pass


class MissingRate(DataError, ValueError):
    pass


class EmptyJoin(DataError, ValueError):
    pass


class MissingBaseReport(DataError, FileNotFoundError):
    pass


class MissingInputFile(DataError, FileNotFoundError):
    """A data file named in the configuration does not exist."""

    def __init__(self, path):
        super().__init__(f"input file not found: {path}")
        self.path = str(path)


class InsufficientContext(DataError, ValueError):
    pass


# --- statistics / benchmarks -------------------------------------------------

class SingularDesign(NumericalError, ValueError):
    pass


class NonConvergence(NumericalError):
    pass


class SingularFit(NumericalError):
    pass


class ZeroVariance(NumericalError, ValueError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class NonPositiveActual(DataError, ValueError):
    pass


class PerfectForecast(NumericalError):
    pass


class DegenerateForecast(NumericalError):
    pass


class ZeroResiduals(NumericalError, ValueError):
    pass
