"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class EEGGNNError(Exception):
    exit_code = 1


class ConfigError(EEGGNNError, ValueError):
    exit_code = 2


class DataError(EEGGNNError):
    exit_code = 3


class ValidationError(DataError, ValueError):
    """An argument or dataset violates a documented invariant."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class SizeMismatchError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class FormatVersionError(DataError):
    pass


class LabelRangeError(ValidationError):
    pass


class DegenerateDegreeError(ValidationError):
    def __init__(self, node, degree):
        super().__init__(f"node {node} has degenerate degree {degree!r} (|D_ii| <= 1e-12)")
        self.node = node


class DivergenceError(EEGGNNError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class LeakageError(EEGGNNError):
    exit_code = 5


class ProtocolError(EEGGNNError):
    exit_code = 4
