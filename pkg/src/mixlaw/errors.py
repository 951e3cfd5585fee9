"""Exception taxonomy shared by every mixlaw module."""


class MixLawError(Exception):
    """Base class for all mixlaw domain errors."""


class InvalidMixture(MixLawError):
    """Weights are negative, do not sum to one, or names are malformed."""


class DomainMismatch(MixLawError):
    """Two objects disagree on the set or order of domain names."""


class DegenerateMixtureTerm(MixLawError):
    """A mixture-dependent term of a law is singular at the given point."""


class BoundaryGradient(MixLawError):
    """A mixture gradient is unbounded at a simplex boundary point."""


class EmptyDataset(MixLawError):
    """No records available for the requested target."""


class NonFiniteObjective(MixLawError):
    """The fitting objective is not finite at the starting point."""


class FitFailed(MixLawError):
    """Every restart of a fit failed to produce a finite minimum."""


class ShapeMismatch(MixLawError):
    """Parallel sequences have different lengths."""


class InvalidObservation(MixLawError):
    """An observed loss is zero or negative."""


class InfeasibleGrid(MixLawError):
    """The requested simplex grid or sampler constraints are unsatisfiable."""


class InfeasibleSplit(MixLawError):
    """A train/test mixture split leaves one side empty."""


class OptimizationDiverged(MixLawError):
    """Mirror descent produced a non-finite gradient or objective."""


class ParseError(MixLawError):
    """A run file line could not be decoded."""


class IoError(MixLawError):
    """A file could not be read or written."""


class SchemaError(MixLawError):
    """A stored artifact violates its schema."""
