"""Exception hierarchy shared across the laboratory.

The CLI maps the three top-level families to exit codes: configuration
problems exit 2, data problems exit 3, numeric failures exit 4.
"""


class XferlabError(Exception):
    pass


class ConfigInvalid(XferlabError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DataError(XferlabError):
    pass


class BadMagic(DataError):
    pass


class CountMismatch(DataError):
    pass


class Truncated(DataError):
    pass


class EmptyClass(DataError):
    pass


class DegenerateClass(DataError):
    pass


class OddWidth(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ColumnMissing(DataError):
    pass


class NumericError(XferlabError):
    pass


class NotSymmetric(NumericError):
    pass


class NotPSD(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass
