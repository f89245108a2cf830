"""Exception types shared across the package."""


class OtexError(Exception):
    """Base class for all package errors."""


class ShapeError(OtexError, ValueError):
    pass


class ContractError(OtexError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ValidationError(OtexError, ValueError):
    pass


class FormatError(OtexError, ValueError):
    """Malformed input file (embeddings, model container, CoNLL)."""


class CapabilityError(OtexError):
    """The model lacks a component required by the request."""


class GradCheckError(OtexError):
    pass
