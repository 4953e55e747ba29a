"""Exception hierarchy shared by every module."""


class MBAError(Exception):
    pass


class ParameterError(MBAError, ValueError):
    """Argument outside its admissible range."""


class NodeLookupError(MBAError, KeyError):
    """Unknown node id (or other keyed entity)."""

    def __str__(self):
        return Exception.__str__(self)


class GenerationError(MBAError):
    pass


class SamplingError(MBAError):
    pass


class ConfigurationError(MBAError, ValueError):
    """Shape or dimension mismatch between collaborating pieces."""


class DegenerateDistributionError(MBAError, ValueError):
    pass


class NumericError(MBAError, ArithmeticError):
    pass


class ConsistencyError(MBAError):
    pass


class StateError(MBAError):
    pass


class CoverageError(ConsistencyError):
    pass


class AlignmentError(MBAError):
    pass


class InvalidTrajectoryError(MBAError, ValueError):
    pass


class CheckpointMismatchError(MBAError):
    """Checkpoint, world and episode files do not belong together."""
