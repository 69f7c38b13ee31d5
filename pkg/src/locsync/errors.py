"""Exception taxonomy shared across the package."""


class LocsyncError(Exception):
    """Base class for all package errors."""


class ModelError(LocsyncError):
    """A measurement or state model was evaluated outside its domain."""


class SingularityError(ModelError):
    """A Jacobian is undefined, e.g. two nodes at the same position."""


class ProtocolError(LocsyncError):
    """An exchange record is missing stamps or has inconsistent durations."""


class TopologyError(LocsyncError):
    """A node graph violates a structural requirement (connectivity, arity)."""


class NumericalError(LocsyncError):
    """A linear-algebra kernel hit a singular or non-finite intermediate."""

    def __init__(self, message, term_index=None):
        if term_index is not None:
            message = f"{message} (term {term_index})"
        super().__init__(message)
        self.term_index = term_index


class AlignmentError(LocsyncError):
    """Point-set alignment is undefined (too few points, degenerate spread)."""


class ConfigError(LocsyncError):
    """A scenario configuration failed validation."""
