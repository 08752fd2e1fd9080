"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration file or parameter set."""


class GridError(ValueError):
    """Grid construction rejected (node counts, extents)."""


class FrameError(ValueError):
    """Field supplied in the wrong coordinate frame."""


class ParityError(ValueError):
    """Angular operation on a field without a usable parity tag."""


class SolveError(RuntimeError):
    """Linear solve failed, did not converge, or left a large residual."""


class CflError(RuntimeError):
    """Explicit step size violates the advective CFL bound."""


class OverflowGuardError(RuntimeError):
    """An exponent (typically 2/alpha scaled) would leave float64 range."""
