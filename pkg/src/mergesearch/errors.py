"""Exception hierarchy.

Everything raised on purpose derives from :class:`MergeSearchError`. The CLI
maps :class:`EvaluatorError` subclasses to exit code 3 and every other
:class:`MergeSearchError` to exit code 2.
"""


class MergeSearchError(Exception):
    pass


class ContractError(MergeSearchError, ValueError):
    """A precondition or invariant of the public API was violated."""


# tensorstore
class InvalidTensor(ContractError):
    pass


class CheckpointFormatError(ContractError):
    pass


class BadMagic(CheckpointFormatError):
    pass


class UnsupportedVersion(CheckpointFormatError):
    pass


class CorruptHeader(CheckpointFormatError):
    pass


class TruncatedPayload(CheckpointFormatError):
    pass


class PoolInvalid(ContractError):
    pass


# merger
class DegenerateWeights(ContractError):
    pass


class ShapeMismatch(ContractError):
    pass


# cmaes
class GenerationFull(ContractError):
    pass


class UnknownToken(ContractError):
    pass


class DoubleTell(ContractError):
    pass


class InvalidFitness(ContractError):
    pass


# fitness / evaluation
class MissingTask(ContractError):
    pass


class EvaluatorError(MergeSearchError):
    pass


class EvaluatorCrashed(EvaluatorError):
    def __init__(self, message, returncode=None, stderr=""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


class ProtocolError(EvaluatorError):
    pass


# toylab
class PoolTooLarge(ContractError):
    pass


class TradeoffNotCertified(MergeSearchError):
    pass


# analysis
class LengthMismatch(ContractError):
    pass


class ConstantSeries(ContractError):
    pass


# driver
class CorruptLog(ContractError):
    pass


class ConfigMismatch(ContractError):
    pass
