"""Exception types. Each carries a stable ``code`` string used in CLI output."""


class SocisError(Exception):
    code = "ERROR"


class InvalidArgument(SocisError, ValueError):
    code = "INVALID_ARGUMENT"


class DomainError(SocisError, ValueError):
    code = "DOMAIN_ERROR"


class SingularPoint(SocisError, ValueError):
    code = "SINGULAR_POINT"


class NonpositiveValue(SocisError, ValueError):
    code = "NONPOSITIVE_VALUE"

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class NoValidSamples(SocisError, RuntimeError):
    code = "NO_VALID_SAMPLES"

    def __init__(self, message, censored_fraction=None, blowup_fraction=None):
        super().__init__(message)
        self.censored_fraction = censored_fraction
        self.blowup_fraction = blowup_fraction


class DegenerateEstimate(SocisError, RuntimeError):
    code = "DEGENERATE_ESTIMATE"


class NumericalBlowup(SocisError, FloatingPointError):
    code = "NUMERICAL_BLOWUP"

    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step


class ConfigError(SocisError, ValueError):
    code = "CONFIG_ERROR"
