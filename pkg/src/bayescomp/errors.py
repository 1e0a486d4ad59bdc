"""Exception hierarchy shared across the package."""


class BayesCompError(Exception):
    """Base class for all package errors."""


class DimensionError(BayesCompError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(BayesCompError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ContractError(BayesCompError, ValueError):
    """A caller violated an operation's precondition."""


class TrainingError(BayesCompError, RuntimeError):
    """Training produced a non-finite loss or gradient.

    ``layer`` is the index of the offending layer when it can be identified.
    """

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class IdxFormatError(BayesCompError, ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class ModelFileError(BayesCompError, ValueError):
    pass


class ModelMagicError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class VersionError(ModelFileError):
    pass


class ModelParseError(ModelFileError):
    pass
