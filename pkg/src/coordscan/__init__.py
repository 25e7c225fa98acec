"""Coordinated message-promotion detection over hashtag co-sharing networks.

The pipeline runs in five stages: co-sharing network construction, noise
corrected backbone extraction, weighted Louvain clustering, per-edge feature
extraction (weight, content similarity, inter-arrival time, node similarity),
and per-cluster isolation-forest anomaly detection with per-feature
attributions.
"""

from coordscan.errors import StageError, ValidationError

__version__ = "0.1.0"

__all__ = ["ValidationError", "StageError", "__version__"]
