"""Shared exception types."""


class FplabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(FplabError):
    """Invalid run configuration: bad syntax, unknown keys, bad values."""


class ModelError(FplabError):
    """Malformed system definition: unknown catalog name, non-SPD diffusion,
    inconsistent potential or linear-drift metadata."""


class NumericsError(FplabError):
    """A numerical run violated a hard invariant (mass loss, negativity,
    boundary leakage) or a linear solve failed."""


class RegimeError(FplabError):
    """An asymptotic estimate was requested outside its regime of validity,
    e.g. a local-Gaussian fit on a multimodal density."""
