"""Backbone feature export for the dqad anomaly-detection engine."""

from .backbones import BACKBONES, FeatureTap, to_model_tensor
from .export import ExportSpec, Exporter, InputImage, export
from .rpag import TRANSFORMS, apply_transforms, make_pseudo_anomaly

__version__ = "0.1.0"
