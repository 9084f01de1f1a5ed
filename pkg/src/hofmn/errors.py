"""Exception types raised across the package."""


class UnsupportedConfigError(ValueError):
    """A loss/optimizer/scheduler combination that cannot be evaluated."""


class DegenerateLossError(ArithmeticError):
    """The DLR denominator vanished (top logit equals the third-ranked logit)."""


class NotEnoughDataError(ValueError):
    """Too few finite observations to fit a surrogate model."""
