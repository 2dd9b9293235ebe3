"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for configuration problems, 3 for numerical failures and 4 for size limits.
"""


class WqedError(Exception):
    exit_code = 3


class ConfigError(WqedError, ValueError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    def __init__(self, message, key_path=""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class InvalidGrid(ConfigError):
    pass


class BadBinCount(ConfigError):
    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class InvalidHole(ConfigError):
    pass


class OverlapError(ConfigError):
    pass


class NoQubit(ConfigError):
    pass


class IncompatibleOffsets(WqedError, ValueError):
    pass


class NumericalError(WqedError, ArithmeticError):
    pass


class QuadratureFailure(NumericalError):
    pass


class EigenFailure(NumericalError):
    pass


class RootDivergence(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class StepFailure(NumericalError):
    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class SizeLimit(WqedError):
    exit_code = 4
