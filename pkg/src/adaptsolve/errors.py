"""Exception hierarchy shared by every module."""


class AdaptSolveError(Exception):
    """Base class for all package errors."""


class FormatError(AdaptSolveError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())


class DimensionError(AdaptSolveError):
    pass


class InconsistentSystemError(AdaptSolveError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class SpecError(AdaptSolveError):
    """Invalid generator, strategy or source parameters."""

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)


class OracleUnavailableError(AdaptSolveError):
    pass


class DegenerateDirectionError(AdaptSolveError):
    pass


class StrategyContractError(AdaptSolveError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class DiagnosticsViolation(AdaptSolveError):
    def __init__(self, message, segment=None):
        self.segment = segment
        super().__init__(message)


class EnumerationBudgetError(AdaptSolveError):
    pass


class ConfigError(AdaptSolveError):
    pass
