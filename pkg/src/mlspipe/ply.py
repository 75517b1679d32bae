"""Binary little-endian PLY reader/writer for the 10-attribute point schema."""

import io
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .cloud import POINT_DTYPE, PointCloud
from .errors import PlyFormatError

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

# names written to disk, in order
SCHEMA = [
    ("x", "float"), ("y", "float"), ("z", "float"),
    ("x_origin", "float"), ("y_origin", "float"), ("z_origin", "float"),
    ("GPS_time", "double"),
    ("reflectance", "uchar"),
    ("label", "uint"),
    ("class", "uint"),
]

FORMAT = "binary_little_endian"


@dataclass
class PlyElement:
    name: str
    count: int
    properties: List[Tuple[str, str]]

    @property
    def dtype(self):
        return np.dtype([(n, PLY_TYPES[t]) for n, t in self.properties])


@dataclass
class PlyHeaderSchema:
    format: str
    version: str
    elements: List[PlyElement]
    comments: List[str]
    size: int

    def element(self, name):
        for el in self.elements:
            if el.name == name:
                return el
        return None


def _open_bytes(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return f.read()
    return source.read()


def parse_header(data: bytes) -> PlyHeaderSchema:
    pos = 0
    lines = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyFormatError("header not terminated by end_header", pos)
        raw = data[pos:nl]
        lines.append((pos, raw.rstrip(b"\r")))
        pos = nl + 1
        if raw.strip() == b"end_header":
            break

    if not lines or lines[0][1].strip() != b"ply":
        raise PlyFormatError("missing 'ply' magic", 0)

    fmt = version = None
    elements: List[PlyElement] = []
    comments = []
    for off, raw in lines[1:-1]:
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError:
            raise PlyFormatError("non-ascii header line", off) from None
        tok = text.split()
        if not tok:
            continue
        key = tok[0]
        if key == "format":
            if len(tok) != 3:
                raise PlyFormatError("bad format line", off)
            fmt, version = tok[1], tok[2]
            if fmt != FORMAT:
                raise PlyFormatError(f"unsupported format {fmt!r}", off)
        elif key in ("comment", "obj_info"):
            comments.append(text[len(key):].strip())
        elif key == "element":
            if len(tok) != 3:
                raise PlyFormatError("bad element line", off)
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyFormatError(f"bad element count {tok[2]!r}", off) from None
            if count < 0:
                raise PlyFormatError("negative element count", off)
            elements.append(PlyElement(tok[1], count, []))
        elif key == "property":
            if not elements:
                raise PlyFormatError("property before any element", off)
            if len(tok) >= 2 and tok[1] == "list":
                raise PlyFormatError("list properties are not supported", off)
            if len(tok) != 3:
                raise PlyFormatError("bad property line", off)
            if tok[1] not in PLY_TYPES:
                raise PlyFormatError(f"unknown property type {tok[1]!r}", off)
            elements[-1].properties.append((tok[2], tok[1]))
        else:
            raise PlyFormatError(f"unexpected header keyword {key!r}", off)
    if fmt is None:
        raise PlyFormatError("missing format line", lines[0][0])
    return PlyHeaderSchema(fmt, version, elements, comments, pos)


def _check_vertex(el, strict, offset):
    if el is None:
        raise PlyFormatError("no vertex element", offset)
    have = {n: PLY_TYPES[t] for n, t in el.properties}
    if strict:
        got = [(n, PLY_TYPES[t]) for n, t in el.properties]
        want = [(n, PLY_TYPES[t]) for n, t in SCHEMA]
        if got != want:
            raise PlyFormatError(f"vertex schema mismatch: {got}", offset)
        return
    for name, t in SCHEMA:
        if name not in have:
            raise PlyFormatError(f"vertex lacks property {name!r}", offset)
        if np.dtype(have[name]) != np.dtype(PLY_TYPES[t]):
            raise PlyFormatError(
                f"property {name!r} has type {have[name]}, expected {PLY_TYPES[t]}", offset)


def read_ply(source, strict=True) -> PointCloud:
    """Decode a PLY file (bytes, path or binary stream) into a PointCloud.

    ``strict`` requires exactly the 10-property vertex schema and nothing
    else; lenient mode skips extra properties and other scalar elements.
    """
    data = _open_bytes(source)
    header = parse_header(data)
    vertex = header.element("vertex")
    _check_vertex(vertex, strict, 0)
    if strict and len(header.elements) != 1:
        raise PlyFormatError("strict mode expects a single vertex element", 0)

    pos = header.size
    cloud_pts = None
    for el in header.elements:
        dt = el.dtype
        nbytes = dt.itemsize * el.count
        if pos + nbytes > len(data):
            raise PlyFormatError(
                f"truncated payload for element {el.name!r}: need {nbytes} bytes, "
                f"have {len(data) - pos}", len(data))
        if el is vertex:
            raw = np.frombuffer(data, dtype=dt, count=el.count, offset=pos)
            if dt == POINT_DTYPE:
                cloud_pts = raw.copy()
            else:
                cloud_pts = np.zeros(el.count, dtype=POINT_DTYPE)
                for name in POINT_DTYPE.names:
                    cloud_pts[name] = raw[name]
        pos += nbytes
    if strict and pos != len(data):
        raise PlyFormatError(f"{len(data) - pos} trailing bytes after payload", pos)

    offset = (0.0, 0.0)
    for c in header.comments:
        tok = c.split()
        if len(tok) == 3 and tok[0] == "offset":
            try:
                offset = (float(tok[1]), float(tok[2]))
            except ValueError:
                pass
    return PointCloud(cloud_pts, offset)


def header_bytes(n, offset=(0.0, 0.0)) -> bytes:
    lines = ["ply", f"format {FORMAT} 1.0"]
    if tuple(offset) != (0.0, 0.0):
        lines.append(f"comment offset {offset[0]!r} {offset[1]!r}")
    lines.append(f"element vertex {n}")
    lines += [f"property {t} {name}" for name, t in SCHEMA]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(cloud: PointCloud, dest) -> int:
    """Write header plus packed records; returns the number of bytes written."""
    payload = header_bytes(len(cloud), cloud.offset) + \
        np.ascontiguousarray(cloud.points, dtype=POINT_DTYPE).tobytes()
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as f:
            f.write(payload)
    else:
        dest.write(payload)
    return len(payload)


def ply_bytes(cloud: PointCloud) -> bytes:
    buf = io.BytesIO()
    write_ply(cloud, buf)
    return buf.getvalue()
