"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for invalid input, 3 for numerical failure, 4 for model-regime violations.
"""


class NecrostripError(Exception):
    exit_code = 3


class ValidationError(NecrostripError, ValueError):
    exit_code = 2


class OrderingViolation(ValidationError):
    pass


class NonPositiveRate(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class OutOfDomain(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class NonPositiveAmplitude(ValidationError):
    pass


class NumericalError(NecrostripError, ArithmeticError):
    exit_code = 3


class NoConvergence(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class NonMonotoneColumn(NumericalError):
    pass


class StepRejected(NumericalError):
    pass


class MinStepReached(NumericalError):
    pass


class TailNotCertified(NumericalError):
    def __init__(self, message, suggested_k_max=None):
        super().__init__(message)
        self.suggested_k_max = suggested_k_max


class RegimeError(NecrostripError):
    exit_code = 4


class NoFlatStationary(RegimeError):
    def __init__(self, message, sigma_star=None):
        super().__init__(message)
        self.sigma_star = sigma_star


class GeometryViolation(RegimeError):
    pass


class DegenerateActiveSet(RegimeError):
    pass
