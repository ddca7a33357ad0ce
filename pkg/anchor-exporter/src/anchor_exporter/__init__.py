"""anchor-exporter: embed class descriptions into the anchor file format."""

from .encoders import DEFAULT_MODEL, EncoderError, HashingEncoder, get_encoder
from .exporter import (ClassDescription, DescriptionError, export_anchors,
                       load_descriptions, write_anchor_file)

__version__ = "0.1.0"

__all__ = [
    "ClassDescription", "DEFAULT_MODEL", "DescriptionError", "EncoderError",
    "HashingEncoder", "export_anchors", "get_encoder", "load_descriptions",
    "write_anchor_file",
]
