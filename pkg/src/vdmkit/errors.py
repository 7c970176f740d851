"""Exception hierarchy shared by every vdmkit module.

The CLI maps each class name to a one-line machine-parsable error record, so
the names are part of the public surface.
"""


class VDMError(Exception):
    """Base class for all vdmkit errors."""


# autodiff
class MissingInputError(VDMError):
    pass


class ShapeError(VDMError):
    pass


class RankError(VDMError):
    pass


class EvaluationError(VDMError):
    pass


# schedules
class DomainError(VDMError):
    pass


class ConfigurationError(VDMError):
    pass


class ScheduleInvalidError(VDMError):
    pass


# diffusion algebra
class OrderingError(VDMError):
    pass


class InvariantViolation(VDMError):
    pass


class SingularityError(VDMError):
    pass


# losses
class QuantizationError(VDMError):
    pass


class ParameterError(VDMError):
    pass


class WeightError(VDMError):
    pass


class SequencingError(VDMError):
    pass


# codec
class CodingError(VDMError):
    pass


class UnderflowError(VDMError):
    pass


class FormatError(VDMError):
    pass


class MismatchError(VDMError):
    pass


class DivergenceError(VDMError):
    pass
