"""Exception types raised across the package."""


class LolNmpcError(Exception):
    """Base class for all package errors."""


class DegenerateQuaternion(LolNmpcError, ValueError):
    pass


class VariantMismatch(LolNmpcError, ValueError):
    pass


class NonFiniteState(LolNmpcError, FloatingPointError):
    pass


class QpInfeasible(LolNmpcError):
    pass


class MaxIterations(LolNmpcError):
    pass


class InvalidParam(LolNmpcError, ValueError):
    pass


class FreeFallSingularity(LolNmpcError, ValueError):
    pass


class ParseError(LolNmpcError, ValueError):
    """Malformed reference or config file.

    ``row`` and ``column`` locate the offending entry when known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DurationMismatch(LolNmpcError, ValueError):
    pass


class DivergedState(LolNmpcError, RuntimeError):
    pass


class ConfigError(LolNmpcError, ValueError):
    pass
