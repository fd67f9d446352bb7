"""Whole-slide biopsy patch classification pipeline.

Polygon-annotated regions are resolved by annotator concordance, tiled
into fixed-size patches with area and white-content filters, sampled into
deterministic train/val/test manifests, and classified with a from-scratch
DenseNet-21 trained with Adam and cross-entropy.
"""

__version__ = "0.1.0"

from histodense.labels import ClassLabel, CLASS_ORDER

__all__ = ["ClassLabel", "CLASS_ORDER", "__version__"]
