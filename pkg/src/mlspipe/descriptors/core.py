"""Per-object descriptor vectors and their on-disk table format."""

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from ..cloud import ElevationImage
from ..errors import IncompatibleModel, InvalidParameter, ModelFormatError
from .esf import N_BINS as ESF_BINS, esf
from .geom import GEOM_NAMES, geom_features
from .grsd import N_BINS as GRSD_BINS, RsdThresholds, grsd

LAYOUT_VERSION = "mlspipe-desc/1"
BLOCK_SIZES = {"GEOM": len(GEOM_NAMES), "GRSD": GRSD_BINS, "ESF": ESF_BINS, "CONTEXT": 1}
BLOCK_ORDER = ("GEOM", "GRSD", "ESF", "CONTEXT")
_SEED_MASK = (1 << 64) - 1


def layout_string(blocks) -> str:
    return LAYOUT_VERSION + ":" + ",".join(f"{b}{BLOCK_SIZES[b]}" for b in blocks)


def parse_layout(layout: str):
    """Block names and (start, stop) offsets of a layout string."""
    version, _, body = layout.partition(":")
    if version != LAYOUT_VERSION:
        raise IncompatibleModel(f"unknown descriptor layout version {version!r}")
    offsets = {}
    pos = 0
    for item in filter(None, body.split(",")):
        name = item.rstrip("0123456789")
        size = int(item[len(name):])
        offsets[name] = (pos, pos + size)
        pos += size
    return offsets


@dataclass(frozen=True)
class DescriptorConfig:
    blocks: Tuple[str, ...] = BLOCK_ORDER
    esf_samples: int = 20000
    grsd_voxel: float = 0.25
    subsample_max: int = 10000
    seed: int = 0
    rsd: RsdThresholds = field(default_factory=RsdThresholds)

    def __post_init__(self):
        unknown = set(self.blocks) - set(BLOCK_ORDER)
        if unknown:
            raise InvalidParameter(f"unknown descriptor blocks {sorted(unknown)}")
        if not self.blocks:
            raise InvalidParameter("at least one descriptor block is required")
        # fixed layout order whatever order the caller listed them in
        object.__setattr__(self, "blocks", tuple(b for b in BLOCK_ORDER if b in self.blocks))
        if self.esf_samples < 1 or self.subsample_max < 1:
            raise InvalidParameter("esf_samples and subsample_max must be positive")
        if not self.grsd_voxel > 0:
            raise InvalidParameter("grsd_voxel must be positive")

    @property
    def layout(self) -> str:
        return layout_string(self.blocks)

    @property
    def length(self) -> int:
        return sum(BLOCK_SIZES[b] for b in self.blocks)


@dataclass(frozen=True)
class DescriptorVector:
    values: np.ndarray
    layout: str

    def block(self, name):
        start, stop = parse_layout(self.layout)[name]
        return self.values[start:stop]


def context_elevation(points, elevation: ElevationImage) -> float:
    """Height of the object's lowest point above the ground under its barycentre."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo = pts.min(axis=0)
    # barycentre offset from the raster origin, built from relative
    # coordinates so a common translation cannot move it across a cell edge
    rel = (pts[:, :2] - lo[:2]).mean(axis=0)
    bx = (lo[0] - elevation.origin[0]) + rel[0]
    by = (lo[1] - elevation.origin[1]) + rel[1]
    row, col = elevation.cell_at_offset(bx, by)
    return float(lo[2] - elevation.elevation[row, col])


def object_seed(seed, segment_id):
    return (int(seed) ^ int(segment_id)) & _SEED_MASK


def describe(points, reflectance=None, config=DescriptorConfig(),
             elevation: Optional[ElevationImage] = None, segment_id=0) -> DescriptorVector:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise InvalidParameter("cannot describe an empty object")
    rng = np.random.default_rng(object_seed(config.seed, segment_id))
    sub = pts
    if len(pts) > config.subsample_max and ("GRSD" in config.blocks or "ESF" in config.blocks):
        keep = np.sort(rng.choice(len(pts), config.subsample_max, replace=False))
        sub = pts[keep]
    parts = []
    for block in config.blocks:
        if block == "GEOM":
            parts.append(geom_features(pts, reflectance))
        elif block == "GRSD":
            parts.append(grsd(sub, config.grsd_voxel, config.rsd))
        elif block == "ESF":
            parts.append(esf(sub, config.esf_samples, rng))
        elif block == "CONTEXT":
            if elevation is None:
                raise InvalidParameter("CONTEXT block needs a ground elevation image")
            parts.append(np.array([context_elevation(pts, elevation)]))
    return DescriptorVector(np.concatenate(parts), config.layout)


def describe_segments(cloud, segments: Sequence[np.ndarray], config=DescriptorConfig(),
                      elevation=None, threads=1, segment_ids=None):
    """Descriptor matrix with one row per segment, in segment order."""
    xyz = cloud.xyz
    refl = cloud.reflectance
    if segment_ids is None:
        segment_ids = range(len(segments))

    def one(item):
        sid, idx = item
        return describe(xyz[idx], refl[idx], config, elevation, sid).values

    items = list(zip(segment_ids, segments))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(it) for it in items]
    if not rows:
        return np.zeros((0, config.length))
    return np.vstack(rows)


# descriptor table: magic, layout, shape, float64 rows
_TABLE_MAGIC = b"MLSDESC1"


@dataclass
class DescriptorTable:
    layout: str
    values: np.ndarray
    segment_ids: np.ndarray
    class_ids: np.ndarray


def sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".txt"


def write_descriptor_table(path, table: DescriptorTable):
    values = np.ascontiguousarray(table.values, dtype="<f8")
    if values.ndim != 2:
        raise InvalidParameter("descriptor values must be a 2-D matrix")
    lay = table.layout.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_TABLE_MAGIC)
        f.write(struct.pack("<I", len(lay)))
        f.write(lay)
        f.write(struct.pack("<QQ", values.shape[0], values.shape[1]))
        f.write(values.tobytes())
    with open(sidecar_path(path), "w") as f:
        f.write("row segment_id class_id\n")
        for i, (s, c) in enumerate(zip(table.segment_ids, table.class_ids)):
            f.write(f"{i} {int(s)} {int(c)}\n")


def read_descriptor_table(path) -> DescriptorTable:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(_TABLE_MAGIC):
        raise ModelFormatError(f"{path}: not a descriptor table")
    pos = len(_TABLE_MAGIC)
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        layout = data[pos:pos + n].decode("utf-8")
        pos += n
        rows, cols = struct.unpack_from("<QQ", data, pos)
        pos += 16
    except (struct.error, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path}: corrupt header ({e})") from None
    if len(data) - pos != rows * cols * 8:
        raise ModelFormatError(f"{path}: payload size does not match {rows}x{cols}")
    values = np.frombuffer(data, dtype="<f8", offset=pos).reshape(rows, cols).copy()
    seg = np.arange(rows)
    cls = np.zeros(rows, dtype=np.int64)
    side = sidecar_path(path)
    if os.path.exists(side):
        with open(side) as f:
            lines = [ln.split() for ln in f.read().splitlines()[1:] if ln.strip()]
        if len(lines) != rows:
            raise ModelFormatError(f"{side}: {len(lines)} rows, expected {rows}")
        seg = np.array([int(t[1]) for t in lines], dtype=np.int64)
        cls = np.array([int(t[2]) for t in lines], dtype=np.int64)
    return DescriptorTable(layout, values, seg, cls)
