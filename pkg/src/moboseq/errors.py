"""Exception types raised across the package."""


class MoboSeqError(Exception):
    """Base class for all package errors."""


class InvalidResidue(MoboSeqError, ValueError):
    def __init__(self, index: int, residue: str):
        super().__init__(f"non-canonical residue {residue!r} at index {index}")
        self.index = index
        self.residue = residue


class LengthMismatch(MoboSeqError, ValueError):
    pass


class RepairFailure(MoboSeqError):
    """No feasible repair was found; the mutation space is over-constrained."""


class SpaceTooSmall(MoboSeqError, ValueError):
    pass


class SpaceTooLarge(MoboSeqError, ValueError):
    pass


class SpaceExhausted(MoboSeqError):
    """Every feasible sequence has already been scored."""


class DimensionMismatch(MoboSeqError, ValueError):
    pass


class ZeroVectors(MoboSeqError, ValueError):
    pass


class DecompositionFailure(MoboSeqError):
    pass


class SequenceTooShort(MoboSeqError, ValueError):
    pass


class EncodingError(MoboSeqError, KeyError):
    pass


class SingularKernel(MoboSeqError):
    pass


class DegenerateTargets(UserWarning):
    """Emitted when an objective has zero variance; the fit falls back to a constant predictor."""


class WrongObjectiveCount(MoboSeqError, ValueError):
    pass


class UnsupportedDimension(MoboSeqError, ValueError):
    pass


class BudgetExhausted(MoboSeqError):
    """Raised before any oracle I/O when the remaining budget cannot cover a request."""


class OracleFailure(MoboSeqError):
    pass


class SpawnFailure(OracleFailure):
    pass


class HandshakeTimeout(OracleFailure):
    pass


class ProtocolViolation(OracleFailure):
    pass


class ExternalOracleRefused(MoboSeqError):
    pass


class MissingWeight(MoboSeqError, KeyError):
    pass


class ConfigError(MoboSeqError, ValueError):
    pass
