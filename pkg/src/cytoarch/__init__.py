"""Cell-shape cytoarchitecture: segment cells, embed their shapes, detect
brain structures with interpretable per-cell features."""

__version__ = "0.1.0"

from .features import FEATURE_NAMES, MANUAL_FEATURE_NAMES, N_FEATURES

__all__ = ["FEATURE_NAMES", "MANUAL_FEATURE_NAMES", "N_FEATURES", "__version__"]
