"""Exception types shared across the package."""


class FairVoltError(Exception):
    """Base class for package errors."""


class ParseError(FairVoltError):
    """A network or profile file could not be parsed."""


class TopologyError(FairVoltError):
    """The feeder graph is not a connected radial tree."""


class NonRadialError(TopologyError):
    """Raised by the power-flow solver for a non-radial network."""


class ShapeError(FairVoltError, ValueError):
    """Array lengths or column sets do not line up."""


class DomainError(FairVoltError, ValueError):
    """An argument lies outside its admissible range."""


class NotConverged(FairVoltError):
    """A power-flow solution did not converge."""


class NumericalError(FairVoltError):
    """NaN or inf appeared during training."""


class EmptyBatch(FairVoltError, ValueError):
    pass


class ConfigError(FairVoltError):
    """Invalid run configuration."""


class RangeMismatch(FairVoltError, ValueError):
    """Scenario summaries cover different evaluation ranges."""
