"""Urban MLS point-cloud pipeline: ground extraction, connectivity
segmentation, object descriptors, Random Forest classification and the
matching-based evaluation metrics."""

__version__ = "0.1.0"
