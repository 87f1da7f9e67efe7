class VcamError(Exception):
    """
    Mixin carried by every error raised on purpose by this package, so callers
    (the CLI, the Monte Carlo harness) can tell expected failures from bugs.
    """
    pass


class SplineSpecError(VcamError, ValueError):
    pass


class SplineDomainError(VcamError, ValueError):
    pass


class NumericsError(VcamError, ArithmeticError):
    pass


class SingularSystemError(NumericsError):
    pass


class DatasetError(VcamError, ValueError):
    pass


class EstimationError(VcamError, ValueError):
    pass


class PenaltyError(VcamError, ValueError):
    pass


class DegenerateComponentError(VcamError, ArithmeticError):

    def __init__(self, k: int, message: str | None = None) -> None:
        self.k = k
        super(DegenerateComponentError, self).__init__(
            message or 'component `{}` has (near) zero L2 norm.'.format(k)
        )


class ConfigurationError(VcamError, ValueError):

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super(ConfigurationError, self).__init__('`{}`: {}'.format(key, message))
