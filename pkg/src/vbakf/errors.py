"""Exception types raised across the package."""


class VbakfError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(VbakfError, ValueError):
    """A matrix that must be SPD failed its Cholesky factorization."""


class DomainError(VbakfError, ValueError):
    """A scalar argument lies outside a function's domain."""


class MeanUndefined(VbakfError, ValueError):
    """The inverse-Wishart mean does not exist for the given degrees of freedom."""


class ConfigError(VbakfError, ValueError):
    """Invalid scenario, hyper-parameter or experiment configuration."""


class UnknownPreset(ConfigError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class LengthMismatch(VbakfError, ValueError):
    pass


class EmptyInput(VbakfError, ValueError):
    pass


class FilterError(VbakfError, RuntimeError):
    """Numerical failure inside the filter, annotated with where it happened."""

    def __init__(self, message: str, *, k: int | None = None, iteration: int | None = None,
                 sensor: int | None = None):
        where = [f"{name}={val}" for name, val in (("k", k), ("iteration", iteration), ("sensor", sensor))
                 if val is not None]
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.k = k
        self.iteration = iteration
        self.sensor = sensor


class ExperimentError(VbakfError, RuntimeError):
    """A Monte-Carlo repetition failed; ``__cause__`` holds the original error."""

    def __init__(self, message: str, *, sweep_index: int, rep: int, seed: int):
        super().__init__(f"{message} (sweep point {sweep_index}, rep {rep}, seed {seed})")
        self.sweep_index = sweep_index
        self.rep = rep
        self.seed = seed
