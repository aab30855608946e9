"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class PhotonBufferError(Exception):
    exit_code = 1


class ConfigError(PhotonBufferError, ValueError):
    """Malformed configuration or out-of-range parameter."""

    exit_code = 2


class PhysicsValidationError(PhotonBufferError):
    """Parameters are individually valid but cannot run together."""

    exit_code = 3


class CapacityError(PhysicsValidationError):
    pass


class CollisionError(PhysicsValidationError):
    pass


class WaveformError(PhysicsValidationError):
    pass


class ContractError(PhysicsValidationError):
    """A call violated an operation precondition (time span, grid, ...)."""


class AnalysisError(PhotonBufferError):
    exit_code = 4


class UndefinedG2Error(AnalysisError):
    pass


class InsufficientPointsError(AnalysisError):
    pass


class UnsupportedOracleError(AnalysisError):
    pass
