"""Exception hierarchy shared by every ami_lab module."""


class AmiLabError(Exception):
    """Base class for all library errors."""


class RankDeficient(AmiLabError, ArithmeticError):
    pass


class InvalidProbability(AmiLabError, ValueError):
    pass


class InvalidAlphabet(AmiLabError, ValueError):
    pass


class InvalidParams(AmiLabError, ValueError):
    pass


class ShapeMismatch(AmiLabError, ValueError):
    pass


class CannotDeduplicate(AmiLabError, RuntimeError):
    pass


class DegenerateSingleton(AmiLabError, ValueError):
    pass


class SingletonAlphabet(AmiLabError, ValueError):
    pass


class ParseError(AmiLabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatch(ParseError):
    pass


class EmptyDataset(AmiLabError, ValueError):
    pass


class InvalidTau(AmiLabError, ValueError):
    pass


class EmptyBatch(AmiLabError, ValueError):
    pass


class NoFeasibleBeta(AmiLabError, ValueError):
    pass


class InvalidCardinality(AmiLabError, ValueError):
    pass


class DegenerateSplit(AmiLabError, RuntimeError):
    pass


class CalibrationDegenerate(AmiLabError, RuntimeError):
    pass


class ConfigError(AmiLabError, ValueError):
    """Raised for malformed experiment files or command-line overrides."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
