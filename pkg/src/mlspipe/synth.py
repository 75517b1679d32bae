"""Deterministic synthetic MLS scenes with exact ground truth.

The road runs along +x from 0 to ``length``, centred on y = 0, with ground
height ``grade * x``. Surfaces are sampled uniformly by area; real scanner
anisotropy and occlusion are not modelled.
"""

import os
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .classes import ClassNode, ClassTree, class_tree_xml
from .cloud import PointCloud
from .errors import InvalidParameter
from .ply import write_ply

GROUND_CLASS = 1
CAR, POLE, TRASH_CAN, PEDESTRIAN, BOLLARD, BUSH = 10, 20, 30, 40, 50, 60
CLASS_NAMES = {
    GROUND_CLASS: "ground", CAR: "car", POLE: "pole", TRASH_CAN: "trash_can",
    PEDESTRIAN: "pedestrian", BOLLARD: "bollard", BUSH: "bush",
}
REFLECTANCE = {GROUND_CLASS: 20, CAR: 120, POLE: 160, TRASH_CAN: 90,
               PEDESTRIAN: 60, BOLLARD: 200, BUSH: 40}
PRIMITIVES = ("box", "cylinder", "sphere")


@dataclass
class SceneObject:
    primitive: str
    x: float
    y: float
    size: Tuple[float, ...]  # box (lx, ly, lz); cylinder (r, h); sphere (r,)
    class_id: int
    yaw: float = 0.0
    lift: float = 0.0
    reflectance: Optional[float] = None

    def __post_init__(self):
        want = {"box": 3, "cylinder": 2, "sphere": 1}
        if self.primitive not in want:
            raise InvalidParameter(f"unknown primitive {self.primitive!r}")
        self.size = tuple(float(s) for s in self.size)
        if len(self.size) != want[self.primitive] or min(self.size) <= 0:
            raise InvalidParameter(f"{self.primitive} needs {want[self.primitive]} positive sizes")
        if self.lift < 0:
            raise InvalidParameter("lift must be >= 0")


@dataclass
class SceneSpec:
    length: float = 40.0
    width: float = 12.0
    grade: float = 0.0
    density: float = 1500.0
    noise_sigma: float = 0.01
    sensor_height: float = 2.71
    trajectory: Optional[List[Tuple[float, float]]] = None  # default: centre line
    trajectory_spacing: float = 1.0
    range_max: float = 20.0
    speed: float = 5.0
    seed: int = 0
    ground_class: int = GROUND_CLASS
    ground_reflectance: float = 20.0
    objects: List[SceneObject] = field(default_factory=list)

    def __post_init__(self):
        if self.grade < 0:
            raise InvalidParameter("grade must be >= 0")
        for name in ("density", "trajectory_spacing", "range_max", "speed", "sensor_height"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")
        if self.length < 0 or self.width < 0 or self.noise_sigma < 0:
            raise InvalidParameter("length, width and noise_sigma must be >= 0")

    def ground_z(self, x, y=None):
        return self.grade * np.asarray(x, dtype=np.float64)


def _rot(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def _surface_count(area, density):
    return int(np.floor(area * density + 0.5))


def _sample_box(obj, spec, rng):
    lx, ly, lz = obj.size
    base = float(spec.ground_z(obj.x)) + obj.lift
    R = _rot(obj.yaw)
    pts = []
    half = np.array([lx, ly]) / 2.0
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * half
    world = corners @ R.T + [obj.x, obj.y]
    # grounded boxes reach the terrain at every corner; lifted ones stay rigid
    zlow = float(spec.ground_z(world[:, 0]).min()) if obj.lift == 0 else base
    top = base + lz
    # top face
    n = _surface_count(lx * ly, spec.density)
    uv = (rng.random((n, 2)) - 0.5) * [lx, ly]
    pts.append(np.column_stack([uv @ R.T + [obj.x, obj.y], np.full(n, top)]))
    if obj.lift > 0:
        n = _surface_count(lx * ly, spec.density)
        uv = (rng.random((n, 2)) - 0.5) * [lx, ly]
        pts.append(np.column_stack([uv @ R.T + [obj.x, obj.y], np.full(n, base)]))
    wall_h = top - zlow
    for axis, length, offset in ((0, lx, ly / 2), (1, ly, lx / 2)):
        for sign in (-1.0, 1.0):
            n = _surface_count(length * wall_h, spec.density)
            t = (rng.random(n) - 0.5) * length
            z = top - rng.random(n) * wall_h
            local = np.zeros((n, 2))
            local[:, axis] = t
            local[:, 1 - axis] = sign * offset
            xy = local @ R.T + [obj.x, obj.y]
            keep = (z >= spec.ground_z(xy[:, 0])) | (obj.lift > 0)
            pts.append(np.column_stack([xy[keep], z[keep]]))
    return np.vstack(pts)


def _sample_cylinder(obj, spec, rng):
    r, h = obj.size
    base = float(spec.ground_z(obj.x)) + obj.lift
    zlow = float(spec.ground_z(obj.x - r)) if obj.lift == 0 else base
    top = base + h
    wall_h = top - zlow
    n = _surface_count(2 * np.pi * r * wall_h, spec.density)
    th = rng.random(n) * 2 * np.pi
    z = top - rng.random(n) * wall_h
    xy = np.column_stack([obj.x + r * np.cos(th), obj.y + r * np.sin(th)])
    keep = (z >= spec.ground_z(xy[:, 0])) | (obj.lift > 0)
    pts = [np.column_stack([xy[keep], z[keep]])]
    caps = [top] + ([base] if obj.lift > 0 else [])
    for zc in caps:
        n = _surface_count(np.pi * r * r, spec.density)
        rr = r * np.sqrt(rng.random(n))
        th = rng.random(n) * 2 * np.pi
        pts.append(np.column_stack([obj.x + rr * np.cos(th), obj.y + rr * np.sin(th),
                                    np.full(n, zc)]))
    return np.vstack(pts)


def _sample_sphere(obj, spec, rng):
    (r,) = obj.size
    centre = np.array([obj.x, obj.y, float(spec.ground_z(obj.x)) + obj.lift + r])
    n = _surface_count(4 * np.pi * r * r, spec.density)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    p = centre + r * d
    return p[p[:, 2] >= spec.ground_z(p[:, 0])]


_SAMPLERS = {"box": _sample_box, "cylinder": _sample_cylinder, "sphere": _sample_sphere}


def _footprint_mask(obj, xy):
    d = xy - [obj.x, obj.y]
    if obj.primitive == "box":
        local = d @ _rot(obj.yaw)
        return (np.abs(local[:, 0]) <= obj.size[0] / 2) & (np.abs(local[:, 1]) <= obj.size[1] / 2)
    if obj.primitive == "cylinder":
        return (d ** 2).sum(axis=1) <= obj.size[0] ** 2
    return np.zeros(len(xy), dtype=bool)


def trajectory_origins(spec: SceneSpec):
    """Sensor positions every ``trajectory_spacing`` metres along the polyline."""
    poly = np.asarray(spec.trajectory if spec.trajectory else
                      [(0.0, 0.0), (spec.length, 0.0)], dtype=np.float64)
    seg = np.diff(poly, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.arange(0.0, cum[-1] + 1e-9, spec.trajectory_spacing)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = np.divide(s - cum[k], seg_len[k], out=np.zeros_like(s), where=seg_len[k] > 0)
    xy = poly[k] + seg[k] * t[:, None]
    z = spec.ground_z(xy[:, 0]) + spec.sensor_height
    return np.column_stack([xy, z]), s


def generate(spec: SceneSpec) -> PointCloud:
    """Sample the scene; points are ordered by GPS time along the trajectory."""
    n_obj = len(spec.objects)
    streams = np.random.SeedSequence(int(spec.seed)).spawn(n_obj + 2)
    parts, labels, classes, refl_base = [], [], [], []

    g_rng = np.random.default_rng(streams[0])
    n = _surface_count(spec.length * spec.width, spec.density)
    gx = g_rng.random(n) * spec.length
    gy = (g_rng.random(n) - 0.5) * spec.width
    keep = np.ones(n, dtype=bool)
    gxy = np.column_stack([gx, gy])
    for obj in spec.objects:
        if obj.lift == 0:
            keep &= ~_footprint_mask(obj, gxy)
    gxy = gxy[keep]
    parts.append(np.column_stack([gxy, spec.ground_z(gxy[:, 0])]))
    labels.append(np.zeros(len(gxy), dtype=np.uint32))
    classes.append(np.full(len(gxy), spec.ground_class, dtype=np.uint32))
    refl_base.append(np.full(len(gxy), float(spec.ground_reflectance)))

    for i, obj in enumerate(spec.objects):
        rng = np.random.default_rng(streams[i + 1])
        p = _SAMPLERS[obj.primitive](obj, spec, rng)
        parts.append(p)
        labels.append(np.full(len(p), i + 1, dtype=np.uint32))
        classes.append(np.full(len(p), obj.class_id, dtype=np.uint32))
        r = obj.reflectance if obj.reflectance is not None else REFLECTANCE.get(obj.class_id, 100)
        refl_base.append(np.full(len(p), float(r)))

    xyz = np.vstack(parts) if parts else np.zeros((0, 3))
    labels = np.concatenate(labels)
    classes = np.concatenate(classes)
    refl_base = np.concatenate(refl_base)
    if len(xyz) == 0:
        return PointCloud.empty()

    rng = np.random.default_rng(streams[-1])
    xyz = xyz + rng.normal(scale=spec.noise_sigma, size=xyz.shape) if spec.noise_sigma > 0 else xyz
    refl = np.clip(np.rint(refl_base + rng.normal(scale=3.0, size=len(xyz))), 0, 255)

    origins, arclen = trajectory_origins(spec)
    dist, nearest = cKDTree(origins).query(xyz)
    inside = dist <= spec.range_max
    dt = spec.trajectory_spacing / spec.speed
    gps = 1000.0 + arclen[nearest] / spec.speed + rng.random(len(xyz)) * dt

    order = np.argsort(gps[inside], kind="stable")
    sel = np.flatnonzero(inside)[order]
    return PointCloud.from_arrays(
        xyz[sel], origins[nearest[sel]], gps[sel], refl[sel].astype(np.uint8),
        labels[sel], classes[sel],
    )


def scene_classes() -> ClassTree:
    nodes = {c: ClassNode(c, name) for c, name in CLASS_NAMES.items()}
    tree = ClassTree(nodes)
    tree.coarse_map = {c: c for c in CLASS_NAMES}
    tree.coarse_names = dict(CLASS_NAMES)
    return tree


# --- random urban scene --------------------------------------------------

def _random_object(cls, rng):
    u = rng.uniform
    if cls == CAR:
        return "box", (u(3.8, 4.6), u(1.7, 1.9), u(1.4, 1.6)), u(-0.05, 0.05)
    if cls == POLE:
        return "cylinder", (u(0.08, 0.12), u(4.0, 6.0)), 0.0
    if cls == TRASH_CAN:
        return "cylinder", (u(0.3, 0.35), u(0.9, 1.1)), 0.0
    if cls == PEDESTRIAN:
        return "box", (u(0.45, 0.55), u(0.3, 0.4), u(1.6, 1.85)), u(-0.5, 0.5)
    if cls == BOLLARD:
        return "cylinder", (u(0.08, 0.1), u(0.8, 1.0)), 0.0
    if cls == BUSH:
        return "sphere", (u(0.5, 0.8),), 0.0
    raise InvalidParameter(f"no shape for class {cls}")


def urban_scene(n_objects=60, seed=0, grade=0.0, density=1500.0, width=16.0,
                classes=(CAR, POLE, TRASH_CAN, PEDESTRIAN, BOLLARD, BUSH), gap=1.5) -> SceneSpec:
    """Road with cars on two lanes and street furniture on two sidewalks.

    Classes are balanced (round robin, then shuffled) and objects are kept at
    least ``gap`` metres apart so that each one is a separate component.
    """
    rng = np.random.default_rng(seed)
    seq = [classes[i % len(classes)] for i in range(n_objects)]
    rng.shuffle(seq)
    lanes = {True: [width / 2 - 5.0, -(width / 2 - 5.0)],
             False: [width / 2 - 1.5, -(width / 2 - 1.5)]}
    cursor = {(car, k): 2.0 for car in (True, False) for k in (0, 1)}
    objects = []
    for i, cls in enumerate(seq):
        prim, size, yaw = _random_object(cls, rng)
        is_car = cls == CAR
        lane = min((0, 1), key=lambda k: cursor[(is_car, k)])
        extent = size[0] if prim == "box" else 2 * size[0]
        x = cursor[(is_car, lane)] + extent / 2
        cursor[(is_car, lane)] += extent + gap + rng.uniform(0, 0.5)
        objects.append(SceneObject(prim, x, lanes[is_car][lane], size, cls, yaw=yaw))
    length = max(cursor.values()) + 2.0
    return SceneSpec(length=length, width=width, grade=grade, density=density,
                     seed=seed, objects=objects)


# --- plain-text scene files ----------------------------------------------

_SCALARS = {f.name: f.type for f in fields(SceneSpec) if f.name not in ("objects", "trajectory")}


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def format_scene(spec: SceneSpec) -> str:
    lines = ["# synthetic MLS scene"]
    for f in fields(SceneSpec):
        if f.name in ("objects", "trajectory"):
            continue
        lines.append(f"{f.name}={_fmt(getattr(spec, f.name))}")
    if spec.trajectory:
        lines.append("trajectory=" + ";".join(f"{_fmt(float(x))},{_fmt(float(y))}"
                                              for x, y in spec.trajectory))
    for obj in spec.objects:
        lines.append("")
        lines.append("[object]")
        lines.append(f"primitive={obj.primitive}")
        for name in ("x", "y", "yaw", "lift"):
            lines.append(f"{name}={_fmt(float(getattr(obj, name)))}")
        lines.append("size=" + ",".join(_fmt(float(s)) for s in obj.size))
        lines.append(f"class_id={obj.class_id}")
        if obj.reflectance is not None:
            lines.append(f"reflectance={_fmt(float(obj.reflectance))}")
    return "\n".join(lines) + "\n"


def parse_scene(text: str) -> SceneSpec:
    top = {}
    stanzas = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[object]":
            current = {}
            stanzas.append(current)
            continue
        if "=" not in line:
            raise InvalidParameter(f"scene line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        current[k] = v
    kw = {}
    for k, v in top.items():
        if k == "trajectory":
            kw[k] = [tuple(float(c) for c in p.split(",")) for p in v.split(";") if p.strip()]
        elif k in ("seed", "ground_class"):
            kw[k] = int(v)
        elif k in _SCALARS:
            kw[k] = float(v)
        else:
            raise InvalidParameter(f"unknown scene key {k!r}")
    objs = []
    for st in stanzas:
        try:
            objs.append(SceneObject(
                primitive=st["primitive"], x=float(st["x"]), y=float(st["y"]),
                size=tuple(float(s) for s in st["size"].split(",")),
                class_id=int(st["class_id"]), yaw=float(st.get("yaw", 0.0)),
                lift=float(st.get("lift", 0.0)),
                reflectance=float(st["reflectance"]) if "reflectance" in st else None,
            ))
        except KeyError as e:
            raise InvalidParameter(f"object stanza lacks {e.args[0]!r}") from None
    return SceneSpec(objects=objs, **kw)


def write_fixture(spec: SceneSpec, path):
    """Write ``<path>.ply``, the regenerating ``<path>.scene`` and ``classes.xml``."""
    root, ext = os.path.splitext(os.fspath(path))
    if ext.lower() != ".ply":
        root = os.fspath(path)
    cloud = generate(spec)
    ply_path, scene_path = root + ".ply", root + ".scene"
    write_ply(cloud, ply_path)
    with open(scene_path, "w") as f:
        f.write(format_scene(spec))
    classes_path = os.path.join(os.path.dirname(root) or ".", "classes.xml")
    with open(classes_path, "w") as f:
        f.write(class_tree_xml(scene_classes()))
    return ply_path, scene_path, classes_path
