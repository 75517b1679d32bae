from .core import (BLOCK_ORDER, BLOCK_SIZES, DescriptorConfig, DescriptorTable,
                   DescriptorVector, context_elevation, describe, describe_segments,
                   layout_string, parse_layout, read_descriptor_table,
                   write_descriptor_table)
from .esf import esf
from .geom import GEOM_NAMES, geom_features
from .grsd import RsdThresholds, grsd

__all__ = [
    "BLOCK_ORDER", "BLOCK_SIZES", "DescriptorConfig", "DescriptorTable",
    "DescriptorVector", "GEOM_NAMES", "RsdThresholds", "context_elevation",
    "describe", "describe_segments", "esf", "geom_features", "grsd",
    "layout_string", "parse_layout", "read_descriptor_table",
    "write_descriptor_table",
]
