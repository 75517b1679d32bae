import numpy as np
import pytest

from mlspipe.classes import (class_tree_xml, cloud_stats, coarse_xml, format_stats,
                             read_class_tree)
from mlspipe.cloud import PointCloud
from mlspipe.errors import (ClassTreeError, CyclicHierarchy, DanglingParent,
                            DuplicateClassId, MissingCoarseClass)

# 1 -> (2 -> (4, 5), 3 -> (6, 7))
SEVEN = """<classes>
  <class id="1" name="root">
    <class id="2" name="built">
      <class id="4" name="wall"/>
      <class id="5" name="roof"/>
    </class>
    <class id="3" name="furniture">
      <class id="6" name="pole"/>
      <class id="7" name="bin" note="several"/>
    </class>
  </class>
</classes>"""


def test_single_root():
    tree = read_class_tree('<classes><class id="0" name="unclassified"/></classes>')
    assert len(tree) == 1 and tree.roots == [0]
    assert tree.name(0) == "unclassified" and tree.parent(0) is None


def test_seven_node_tree_relations():
    tree = read_class_tree(SEVEN)
    assert tree.roots == [1]
    assert tree.children(1) == [2, 3]
    assert tree.children(2) == [4, 5]
    assert tree.children(3) == [6, 7]
    for leaf, parent in ((4, 2), (5, 2), (6, 3), (7, 3)):
        assert tree.parent(leaf) == parent
        assert tree.children(leaf) == []
    assert tree.ancestors(7) == [3, 1]
    assert tree.nodes[7].extra == {"note": "several"}


def test_flat_file_with_forward_parent_reference():
    xml = ('<classes><class id="302021200" name="bicycle rack" parent="302020000"/>'
           '<class id="302020000" name="furniture"/></classes>')
    tree = read_class_tree(xml)
    assert tree.parent(302021200) == 302020000
    assert tree.name(302021200) == "bicycle rack"


def test_errors():
    with pytest.raises(DanglingParent):
        read_class_tree('<classes><class id="1" parent="9"/></classes>')
    with pytest.raises(DuplicateClassId):
        read_class_tree('<classes><class id="1"/><class id="1"/></classes>')
    with pytest.raises(CyclicHierarchy):
        read_class_tree('<classes><class id="1" parent="2"/><class id="2" parent="1"/></classes>')
    with pytest.raises(ClassTreeError):
        read_class_tree("<classes><class")


def test_round_trip_and_coarse():
    tree = read_class_tree(SEVEN)
    again = read_class_tree(class_tree_xml(tree))
    assert {k: (v.name, v.parent) for k, v in again.nodes.items()} == \
        {k: (v.name, v.parent) for k, v in tree.nodes.items()}
    coarse = '<classes><class id="4" coarse="2"/><class id="5" coarse="2" coarse_name="building"/></classes>'
    tree = read_class_tree(SEVEN, coarse)
    assert tree.coarse(4) == 2 and tree.coarse_names[2] == "building"
    assert read_class_tree(SEVEN, coarse_xml(tree)).coarse_map == tree.coarse_map
    with pytest.raises(MissingCoarseClass):
        tree.coarse(6)


def test_cloud_stats_totals():
    rng = np.random.default_rng(0)
    n = 500
    label = rng.integers(0, 20, n)
    cls = rng.integers(0, 5, n)
    cloud = PointCloud.from_arrays(np.zeros((n, 3)), label=label, class_id=cls)
    rows = cloud_stats(cloud)
    total = rows[-1]
    assert total.class_id is None
    assert total.points == n == sum(r.points for r in rows[:-1])
    assert total.objects == len(set(label.tolist()) - {0})
    for r in rows[:-1]:
        assert r.objects == len(set(label[(cls == r.class_id) & (label != 0)].tolist()))
    assert "total" in format_stats(rows)
