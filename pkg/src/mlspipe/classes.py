"""Class-tree and coarse-class XML parsing, per-class cloud statistics."""

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import (ClassTreeError, CyclicHierarchy, DanglingParent,
                     DuplicateClassId, MissingCoarseClass)


@dataclass
class ClassNode:
    id: int
    name: str
    parent: Optional[int] = None
    children: List[int] = field(default_factory=list)
    extra: Dict[str, str] = field(default_factory=dict)


@dataclass
class ClassTree:
    nodes: Dict[int, ClassNode]
    coarse_map: Dict[int, int] = field(default_factory=dict)
    coarse_names: Dict[int, str] = field(default_factory=dict)

    def __contains__(self, class_id):
        return int(class_id) in self.nodes

    def __len__(self):
        return len(self.nodes)

    def name(self, class_id):
        node = self.nodes.get(int(class_id))
        return node.name if node else str(class_id)

    def parent(self, class_id):
        return self.nodes[int(class_id)].parent

    def children(self, class_id):
        return list(self.nodes[int(class_id)].children)

    @property
    def roots(self):
        return sorted(i for i, n in self.nodes.items() if n.parent is None)

    def ancestors(self, class_id):
        out = []
        p = self.parent(class_id)
        while p is not None:
            out.append(p)
            p = self.parent(p)
        return out

    def coarse(self, class_id):
        try:
            return self.coarse_map[int(class_id)]
        except KeyError:
            raise MissingCoarseClass(f"class {class_id} has no coarse class") from None


def _attrs(el):
    return {k.lower(): v.strip() for k, v in el.attrib.items()}


def _int(value, what):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ClassTreeError(f"bad {what} {value!r}") from None


def read_class_tree(xml_text, coarse_xml_text=None) -> ClassTree:
    """Parse nested ``<class id=.. name=..>`` elements into a ClassTree.

    An explicit ``parent`` attribute overrides nesting, which allows flat
    files. Ids resolve after the whole document has been scanned.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as e:
        raise ClassTreeError(f"malformed XML: {e}") from None

    raw = []  # (id, name, parent_ref, extra)

    def walk(el, enclosing):
        for child in el:
            if child.tag.lower() != "class":
                walk(child, enclosing)
                continue
            a = _attrs(child)
            if "id" not in a:
                raise ClassTreeError("class element without id")
            cid = _int(a.pop("id"), "id")
            name = a.pop("name", str(cid))
            parent = _int(a.pop("parent"), "parent") if a.get("parent", "") != "" else enclosing
            a.pop("parent", None)
            raw.append((cid, name, parent, a))
            walk(child, cid)

    if root.tag.lower() == "class":
        wrapper = ET.Element("classes")
        wrapper.append(root)
        root = wrapper
    walk(root, None)

    nodes: Dict[int, ClassNode] = {}
    for cid, name, parent, extra in raw:
        if cid in nodes:
            raise DuplicateClassId(f"duplicate class id {cid}")
        nodes[cid] = ClassNode(cid, name, parent, [], extra)
    for node in nodes.values():
        if node.parent is not None and node.parent not in nodes:
            raise DanglingParent(f"class {node.id} refers to unknown parent {node.parent}")
    for cid in nodes:
        seen = {cid}
        p = nodes[cid].parent
        while p is not None:
            if p in seen:
                raise CyclicHierarchy(f"class hierarchy cycle through {cid}")
            seen.add(p)
            p = nodes[p].parent
    for node in nodes.values():
        if node.parent is not None:
            nodes[node.parent].children.append(node.id)
    for node in nodes.values():
        node.children.sort()

    tree = ClassTree(nodes)
    if coarse_xml_text is not None:
        read_coarse_map(coarse_xml_text, tree)
    return tree


def read_coarse_map(xml_text, tree: ClassTree) -> ClassTree:
    """Fill ``tree.coarse_map`` from ``<class id=.. coarse=..>`` elements."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as e:
        raise ClassTreeError(f"malformed XML: {e}") from None
    for el in root.iter():
        if el.tag.lower() != "class":
            continue
        a = _attrs(el)
        if "coarse" not in a or a["coarse"] == "":
            continue
        cid = _int(a.get("id"), "id")
        if cid not in tree.nodes:
            raise ClassTreeError(f"coarse mapping for unknown class {cid}")
        coarse = _int(a["coarse"], "coarse")
        tree.coarse_map[cid] = coarse
        if "coarse_name" in a:
            tree.coarse_names[coarse] = a["coarse_name"]
    return tree


def class_tree_xml(tree: ClassTree) -> str:
    """Serialise a tree in the nested form accepted by ``read_class_tree``."""
    root = ET.Element("classes")

    def add(parent_el, cid):
        node = tree.nodes[cid]
        el = ET.SubElement(parent_el, "class", {"id": str(cid), "name": node.name})
        for c in node.children:
            add(el, c)

    for r in tree.roots:
        add(root, r)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def coarse_xml(tree: ClassTree) -> str:
    root = ET.Element("classes")
    for cid in sorted(tree.coarse_map):
        ET.SubElement(root, "class", {"id": str(cid), "coarse": str(tree.coarse_map[cid])})
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


@dataclass
class StatsRow:
    class_id: Optional[int]
    name: str
    objects: int
    points: int


def cloud_stats(cloud, tree: Optional[ClassTree] = None) -> List[StatsRow]:
    """Object and point counts per class, plus a final totals row.

    Objects are distinct non-zero labels. A label spread over several
    classes counts once in each, so only the totals row is a partition.
    """
    cls = np.asarray(cloud.class_id, dtype=np.int64)
    lab = np.asarray(cloud.label, dtype=np.int64)
    rows = []
    classes, point_counts = np.unique(cls, return_counts=True)
    pairs = np.unique(np.column_stack([cls, lab])[lab != 0], axis=0) if len(cls) else \
        np.zeros((0, 2), np.int64)
    obj_counts = dict(zip(*np.unique(pairs[:, 0], return_counts=True))) if len(pairs) else {}
    for c, n in zip(classes, point_counts):
        name = tree.name(c) if tree is not None else str(int(c))
        rows.append(StatsRow(int(c), name, int(obj_counts.get(c, 0)), int(n)))
    total_objects = len(np.unique(lab[lab != 0]))
    rows.append(StatsRow(None, "total", int(total_objects), int(len(cls))))
    return rows


def format_stats(rows: List[StatsRow]) -> str:
    w = max([len(r.name) for r in rows] + [5])
    out = [f"{'class':>11}  {'name':<{w}}  {'objects':>8}  {'points':>10}"]
    for r in rows:
        cid = "" if r.class_id is None else str(r.class_id)
        out.append(f"{cid:>11}  {r.name:<{w}}  {r.objects:>8}  {r.points:>10}")
    return "\n".join(out)
