"""Exception hierarchy. Everything raised on purpose derives from ``HarError``."""


class HarError(Exception):
    pass


class InputError(HarError, ValueError):
    """Bad argument shape, value or contract violation."""


class AllMissingChannel(InputError):
    pass


class WindowTooLong(InputError):
    pass


class EmptyInput(InputError):
    pass


class ChannelMismatch(InputError):
    pass


class DegenerateSplit(InputError):
    pass


class InvalidSpec(InputError):
    pass


class TooFewSamples(InputError):
    pass


class BadKnots(InputError):
    pass


class InvalidConfig(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class NoPositive(InputError):
    pass


class ClassTooSmall(InputError):
    pass


class EmptySupport(InputError):
    pass


class EmptyReplay(InputError):
    pass


class EmptyClass(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class InsufficientData(InputError):
    pass


class LengthMismatch(InputError):
    pass


class NonFiniteLoss(HarError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CorruptArtifact(HarError, IOError):
    pass


class VersionMismatch(HarError, IOError):
    pass


class StreamAborted(HarError):
    """A stream run failed part way; ``report`` holds the metrics gathered so far."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report
