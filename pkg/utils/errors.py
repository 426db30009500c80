"""Exception hierarchy shared by the library and the command line.

Every error carries an integer ``code`` that the CLI turns into its exit status.
"""


class LshKernelError(Exception):
    """Base class for all toolkit errors"""

    code = 1


class ValidationError(LshKernelError, ValueError):
    """Input failed a precondition"""

    code = 3


class EmptyInputError(ValidationError):
    pass


class InvalidDimensionError(ValidationError):
    pass


class InvalidKError(ValidationError):
    pass


class InsufficientPointsError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DiagonalPairError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class InvalidFeatureCountError(ValidationError):
    pass


class InvalidBucketCountError(ValidationError):
    pass


class InvalidTotalError(ValidationError):
    pass


class IncompleteCodesError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class EmptyGridError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class MismatchedCloudError(ValidationError):
    pass


class OracleCapError(ValidationError):
    pass


class StaleInputError(ValidationError):
    """A replayed input no longer matches the hash recorded in its manifest"""


class DataIOError(LshKernelError, OSError):
    """Reading or writing an artifact failed"""

    code = 4
