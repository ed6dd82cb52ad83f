"""Exception hierarchy shared across the pipeline.

Each pipeline stage raises a subclass of :class:`DPIError`; the CLI maps the
three families (format, usage, numeric) onto stable exit codes.
"""


class DPIError(Exception):
    """Base class for every error raised by dpiformer."""


class DataFormatError(DPIError):
    """Input data is malformed or incompatible (CLI exit code 2)."""


class NumericError(DPIError):
    """A numeric or runtime failure during computation (CLI exit code 3)."""


# packet ingest

class PcapError(DataFormatError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownMagic(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


# dataset builder

class FormatError(DataFormatError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class InsufficientBenign(DataFormatError):
    def __init__(self, n_benign, n_malicious):
        super().__init__(
            f"need at least {n_malicious} benign records to balance, found {n_benign}"
        )
        self.n_benign = n_benign
        self.n_malicious = n_malicious


class UnknownClass(DataFormatError):
    def __init__(self, name, counts=None):
        msg = f"requested class {name!r} has no records"
        if counts:
            msg += f" (available: {dict(counts)})"
        super().__init__(msg)
        self.name = name


class TooSmall(DataFormatError):
    pass


# tokenizer

class EmptyPayload(DataFormatError):
    pass


class NonByteToken(DataFormatError):
    pass


class OddLength(DataFormatError):
    pass


class InvalidHexChar(DataFormatError):
    def __init__(self, char, index):
        super().__init__(f"invalid hex character {char!r} at index {index}")
        self.char = char
        self.index = index


# numerics / model

class ShapeMismatch(DataFormatError):
    pass


class LabelOutOfRange(DataFormatError):
    pass


class NumericHealthError(NumericError):
    pass


class SequenceTooLong(DataFormatError):
    pass


class TokenOutOfRange(DataFormatError):
    pass


class MissingCache(NumericError):
    pass


# trainer

class InvalidSchedule(DPIError, ValueError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at optimizer step {step}")
        self.step = step
        self.value = value


class VersionMismatch(DataFormatError):
    pass


class CheckpointIOError(DataFormatError):
    pass


# evaluator

class LengthMismatch(DataFormatError):
    pass


class EmptyMatrix(DataFormatError):
    pass


class ClassCountMismatch(DataFormatError):
    pass
