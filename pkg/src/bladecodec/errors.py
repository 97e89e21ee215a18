"""Exception hierarchy shared by the codec modules."""


class CodecError(Exception):
    """Base class for all codec failures."""


class CapacityError(CodecError):
    """Alphabet does not fit the requested coder precision."""


class ModelError(CodecError):
    """A probability model produced invalid parameters or samples."""


class ConfigError(CodecError):
    """Inconsistent layer, shape or container configuration."""


class CorruptionError(CodecError):
    """A serialized artifact failed validation while being read."""


class InitialBitsExhausted(CodecError):
    """A decode needed refill bytes but the byte stack is empty."""


class AccountingError(CodecError):
    """Bit accounting was asked to price a symbol outside its alphabet."""
