"""Exception types shared across the package.

Each maps onto one CLI exit code (see ``poseprune.cli``).
"""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter combination."""


class ShapeError(ValueError):
    """Tensor or sequence dimensions do not line up."""


class DataError(ValueError):
    """Malformed input file or record."""


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite."""
