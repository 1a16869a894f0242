"""Exception classes shared across modules."""


class FrgdError(Exception):
    """Base class for library errors."""


class ModelError(FrgdError):
    """A model is inconsistent or cannot support the requested operation."""


class ResourceLimitError(FrgdError):
    """A depth, size or iteration cap was exceeded."""


class GeometryError(FrgdError):
    """Point identification failed (e.g. two vertices of one piece merged)."""


class StructuralError(FrgdError):
    """Network structure prevents the operation (singular block, disconnected pair)."""


class ParseError(FrgdError):
    """Model file syntax or field error."""


class ValidationError(ParseError):
    """Model file parsed but violates an invariant."""


class SchemaError(ParseError):
    """Model file has an unknown field or a field of the wrong type."""
