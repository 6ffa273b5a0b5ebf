"""Exception hierarchy shared by every module."""


class GaslightError(ValueError):
    """Base class for all library errors."""


class GridError(GaslightError):
    """Malformed grid, grid function, or incompatible grids."""


class DegenerateDensityError(GaslightError):
    """A density that must be divided by vanishes at an evaluated point."""


class BudgetExceededError(GaslightError):
    """An enumeration or representation grew past its configured cap."""


class ConfigError(GaslightError):
    """Invalid scenario configuration."""
