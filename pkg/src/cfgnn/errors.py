"""Exception hierarchy shared by all modules."""


class CfgnnError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CfgnnError, ValueError):
    pass


class DegeneratePrecoderError(CfgnnError, ValueError):
    """Raised when a precoder has zero total power, so it cannot be scaled."""


class SingularChannelError(CfgnnError, ArithmeticError):
    """Raised when ZF is requested on a rank-deficient or ill-conditioned channel."""


class NumericalFailureError(CfgnnError, ArithmeticError):
    """A non-finite value appeared during forward or backward propagation."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ParseError(CfgnnError, ValueError):
    """Malformed measurement file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class InsufficientDataError(CfgnnError, ValueError):
    pass


class ConfigError(CfgnnError, ValueError):
    """Config schema violation; ``key`` is the dotted path of the offending key."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class CheckpointError(CfgnnError, ValueError):
    pass


class MeasurementFileNotFound(ParseError, FileNotFoundError):
    pass


class MalformedRowError(ParseError):
    pass


class InconsistentApCountError(ParseError):
    def __init__(self, message, path=None, line=None, position_id=None):
        super().__init__(message, path, line)
        self.position_id = position_id


class NonFiniteValueError(ParseError):
    pass
