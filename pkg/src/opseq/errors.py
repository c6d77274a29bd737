"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the CLI prints as
``ERROR:<code>:<message>``.
"""


class OpseqError(Exception):
    code = "Error"


# trace_ingest
class EmptyTrace(OpseqError):
    code = "EmptyTrace"


class InvalidEncoding(OpseqError):
    code = "InvalidEncoding"


class MissingFile(OpseqError):
    code = "MissingFile"


class MalformedRow(OpseqError):
    code = "MalformedRow"


class DuplicatePath(OpseqError):
    code = "DuplicatePath"


class LabelTooSmall(OpseqError):
    code = "LabelTooSmall"


class InvalidParams(OpseqError):
    code = "InvalidParams"


# ngram / features
class InvalidN(OpseqError):
    code = "InvalidN"


class MixedN(OpseqError):
    code = "MixedN"


class EmptyCorpus(OpseqError):
    code = "EmptyCorpus"


class UnknownTerm(OpseqError):
    code = "UnknownTerm"


class GramOrderMismatch(OpseqError):
    code = "GramOrderMismatch"


class LengthMismatch(OpseqError):
    code = "LengthMismatch"


class FormatError(OpseqError):
    code = "FormatError"


# nn
class ShapeMismatch(OpseqError):
    code = "ShapeMismatch"


class InputTooSmall(OpseqError):
    code = "InputTooSmall"


class LabelOutOfRange(OpseqError):
    code = "LabelOutOfRange"


class NonFiniteGradient(OpseqError):
    code = "NonFiniteGradient"


class EmptyDataset(OpseqError):
    code = "EmptyDataset"


# eval
class EmptyMatrix(OpseqError):
    code = "EmptyMatrix"


class EmptyList(OpseqError):
    code = "EmptyList"


class DegenerateGroups(OpseqError):
    code = "DegenerateGroups"


class TooFewGroups(OpseqError):
    code = "TooFewGroups"


class TooFewObservations(OpseqError):
    code = "TooFewObservations"


class InvalidDegrees(OpseqError):
    code = "InvalidDegrees"


class UsageError(OpseqError):
    code = "Usage"
