# Exceptions shared by all parts of the screening engine.
#
# Two families:
# - ValidationError: the input was wrong (bad grid, bad config, bad flags)
# - NumericalError: the input was fine but the numerics broke down
# The command line maps the first to exit code 2 and the second to 3.


class ScreeningError(Exception):
    pass


class ValidationError(ScreeningError, ValueError):
    pass


class GridParseError(ValidationError):
    pass


class GridValidationError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ScenarioError(ValidationError):
    pass


class TimeGridMismatchError(ValidationError):
    pass


class NumericalError(ScreeningError, ArithmeticError):
    pass


class SingularSystemError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class EmptyEliteError(NumericalError):
    pass


class ZeroDensityError(NumericalError):
    pass


class NonFiniteTrajectoryError(NumericalError):
    pass
