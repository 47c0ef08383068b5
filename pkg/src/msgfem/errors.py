"""Exception taxonomy. The CLI maps `exit_code` to the process exit status:
2 = configuration error, 3 = numerical failure, 4 = invariant breach."""


class MsgfemError(Exception):
    exit_code = 3


class ConfigError(MsgfemError):
    """Malformed config, unknown keys, or unsupported option combinations."""
    exit_code = 2


class InvariantBreachError(MsgfemError):
    """An asserted invariant failed; the message carries the breached quantity."""
    exit_code = 4


class NumericalError(MsgfemError):
    exit_code = 3


# -- precondition / input errors (treated as configuration problems) --------

class InvalidResolutionError(ConfigError):
    pass


class NonpositiveCoefficientError(ConfigError):
    pass


class EmptyRegionError(ConfigError):
    pass


class IncompatibleCoverError(ConfigError):
    pass


class DegenerateOversamplingError(ConfigError):
    pass


class InvalidBlockPairError(ConfigError):
    pass


class OracleTooLargeError(ConfigError):
    pass


# -- numerical failures ------------------------------------------------------

class FactorizationError(NumericalError):
    pass


class LocalSolveError(NumericalError):
    """Local solve failed; carries the offending subdomain id."""

    def __init__(self, subdomain_id, message):
        super().__init__(f"subdomain {subdomain_id}: {message}")
        self.subdomain_id = subdomain_id


class SaddleSingularityError(NumericalError):
    pass


class InsufficientSpectrumError(NumericalError):
    pass


class SolverInconsistencyError(NumericalError):
    pass


class CoarseSingularityError(NumericalError):
    pass
