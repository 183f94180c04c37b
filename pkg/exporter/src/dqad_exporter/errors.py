class ExportError(Exception):
    """Base class for exporter failures."""


class ExportInputError(ExportError, ValueError):
    """An argument violates a precondition."""


class WeightsUnavailableError(ExportError, RuntimeError):
    """Requested pretrained weights cannot be loaded in this environment."""


class ExportSpecError(ExportError):
    """Malformed or inconsistent export spec document."""
