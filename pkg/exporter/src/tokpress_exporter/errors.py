class ExporterError(Exception):
    """Base class for exporter failures."""


class UnsupportedArchitecture(ExporterError):
    """No registered encoder matches the requested model id."""


class LayerNotFound(ExporterError):
    """Layer selector points past the encoder's depth."""


class BadArchive(ExporterError):
    """Tensor archive is missing keys or has inconsistent shapes."""
