class CovertPayError(Exception):
    """Base class for simulator errors."""


class ConfigError(CovertPayError):
    pass


class NodeError(CovertPayError):
    pass


class InsufficientFundsError(CovertPayError):
    pass


class ChannelError(CovertPayError):
    pass


class RoutingError(CovertPayError):
    pass


class CodecError(CovertPayError):
    """Raised when a command cannot be encoded or an amount stream cannot be decoded."""


class EncodeError(CodecError):
    pass


class DecodeError(CodecError):
    pass


class IncompleteCodeError(DecodeError):
    """Stream ended in the middle of a codeword."""


class InvalidCodeError(DecodeError):
    """Digit path matches no codeword."""


class MalformedFrameError(DecodeError):
    pass
