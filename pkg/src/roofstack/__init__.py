"""Roof-material classification pipeline at desk scale.

Library modules:

- ``geodata``: building footprints (GeoJSON subset), exact polygon geometry
- ``raster``: mask rasterization and per-building chip extraction
- ``tensorops``: convolution weight-channel adaptation plus a reference conv oracle
- ``augment``: deterministic, seedable chip augmentation engine
- ``spatial_features``: neighbor statistics and second-level feature assembly
- ``gbdt`` / ``stacking``: gradient-boosted trees, folds, OOF prediction, TTA, metrics
- ``synth``: seeded synthetic maps and a noisy oracle base model
- ``cli``: command-line orchestration of the whole pipeline
"""

from roofstack.errors import RoofstackError

__version__ = "0.1.0"

__all__ = ["RoofstackError", "__version__"]
