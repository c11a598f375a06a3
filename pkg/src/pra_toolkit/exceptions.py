"""Exception hierarchy for pra_toolkit."""


class PRAError(Exception):
    """Base class for every error raised by the toolkit."""


class PanelParseError(PRAError, ValueError):
    """Input file does not follow the panel CSV schema."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionalityError(PRAError, ValueError):
    """Too few stocks or days for the requested computation."""


class DegenerateStockError(PRAError, ValueError):
    """A stock has zero variance over the sample."""

    def __init__(self, ticker):
        self.ticker = ticker
        super().__init__(f"stock {ticker!r} has zero variance")


class LagRangeError(PRAError, ValueError):
    """Requested lag outside [1, T-1]."""


class AlignmentError(PRAError, ValueError):
    """Series or lag grids that must coincide do not."""


class DegenerateConditioningError(PRAError, ValueError):
    """Conditioning series carries no variance, or a required sign is absent."""


class CollinearityError(PRAError, ValueError):
    """Regressors of a multi-regressor fit are (numerically) collinear."""


class SymmetryError(PRAError, ValueError):
    """Matrix expected to be symmetric is not."""


class DegeneracyError(PRAError, ValueError):
    """Eigenvalue gap or spectrum too degenerate for the requested quantity."""


class NormalizationError(PRAError, ValueError):
    """Vector expected to have unit norm does not."""


class FormulaDomainError(PRAError, ArithmeticError):
    """An analytic formula returned a value outside its mathematical domain."""


class ConvergenceError(PRAError, RuntimeError):
    """Iterative solver failed to converge."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class QuantileError(PRAError, ValueError):
    """Not enough samples to estimate the requested quantile."""


class BinningError(PRAError, ValueError):
    """Fewer samples than bins."""


class UnderdeterminedFitError(PRAError, ValueError):
    """Fewer data points than free parameters."""


class ConfigError(PRAError, ValueError):
    """Pipeline configuration failed validation."""


class MatrixDomainError(PRAError, ValueError):
    """Matrix argument outside its required domain (e.g. not positive semi-definite)."""
