"""Offline feature exporter: frozen image backbones -> evseg streams."""

from .backbones import (BACKBONES, BackboneError, BlockStatsBackbone,
                        InceptionV3Backbone, get_backbone)
from .export import ExportConfig, ExportError, ExportResult, export_features

__version__ = "0.1.0"

__all__ = [
    "BACKBONES", "BackboneError", "BlockStatsBackbone",
    "InceptionV3Backbone", "get_backbone",
    "ExportConfig", "ExportError", "ExportResult", "export_features",
    "__version__",
]
