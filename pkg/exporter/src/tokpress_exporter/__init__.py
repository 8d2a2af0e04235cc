"""tokpress-exporter: bridge from vision encoders to tensor-dump files."""

from .dumpwriter import write_token_dump
from .errors import BadArchive, ExporterError, LayerNotFound, UnsupportedArchitecture
from .export import convert_archive, export_media, load_frames
from .toyencoder import ARCHITECTURES, ToyEncoder, build_encoder

__version__ = "0.1.0"

__all__ = [
    "write_token_dump",
    "BadArchive", "ExporterError", "LayerNotFound", "UnsupportedArchitecture",
    "convert_archive", "export_media", "load_frames",
    "ARCHITECTURES", "ToyEncoder", "build_encoder",
    "__version__",
]
