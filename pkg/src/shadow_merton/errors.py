"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class SolverError(RuntimeError):
    """The free boundary solver or an iterative routine failed."""


class ProvenanceError(ValueError):
    """Artifacts built from different parameter sets were combined, or a
    serialized artifact was modified after it was written."""
