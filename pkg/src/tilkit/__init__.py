"""Whole-slide image toolkit.

Library-first package: stain deconvolution and augmentation (stainlab),
the rule-based nucleus detector (helm), the instance segmentation and
classification metric suite (instmetrics), survival statistics (survival),
cohort plumbing (cohort), DeepZoom pyramids (pyramid) and the HTTP
annotation service (service). The ``tilkit`` CLI fronts all of it.
"""

__version__ = "0.1.0"
