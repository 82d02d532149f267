"""Exception hierarchy shared by the pipeline stages.

Every error raised on bad input derives from ``FKPError``; validation
problems additionally derive from ``ValueError`` so generic callers can
catch them the usual way.
"""


class FKPError(Exception):
    """Base class for all package errors."""


class ValidationError(FKPError, ValueError):
    pass


# dataset
class MissingManifest(FKPError, FileNotFoundError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"manifest line {line_no}: {reason}".rstrip(": "))


class DuplicateKey(ValidationError):
    def __init__(self, subject, instance, session, sample):
        self.key = (subject, instance, session, sample)
        super().__init__(
            f"duplicate record subject={subject} instance={instance} "
            f"session={session} sample={sample}")


class DanglingImageRef(ValidationError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"image file does not exist: {path}")


class InvalidConfig(ValidationError):
    def __init__(self, field, reason="invalid value"):
        self.field = field
        super().__init__(f"{field}: {reason}")


class IoFailure(FKPError, OSError):
    def __init__(self, path, reason=""):
        self.path = path
        super().__init__(f"I/O failure on {path}: {reason}".rstrip(": "))


# preprocess
class DegenerateOutput(ValidationError):
    pass


class InvalidThresholds(ValidationError):
    pass


class InsufficientBoundary(ValidationError):
    pass


class EmptyCodeMap(ValidationError):
    pass


class RoiOutOfBounds(ValidationError):
    pass


# features / fusion / matcher
class NyquistViolation(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class GridTooFine(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class MixedSchemes(ValidationError):
    pass


class DuplicateInstance(ValidationError):
    pass


class KeyMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class FormatError(ValidationError):
    """A binary feature or stats file is truncated or has a bad header."""


# evaluation
class MissingInstance(ValidationError):
    def __init__(self, subject, instance):
        self.subject = subject
        self.instance = instance
        super().__init__(f"subject {subject} lacks instance {instance} in one of the sessions")


class EmptyScoreSet(ValidationError):
    pass


class InconsistentOperatingPoints(ValidationError):
    pass
