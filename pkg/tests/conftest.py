import numpy as np
import pytest

from mlspipe.cloud import PointCloud

_ACCEPTANCE = []


def random_cloud(rng, n, offset=(0.0, 0.0)):
    """Cloud with every attribute drawn at random (finite values only)."""
    return PointCloud.from_arrays(
        rng.normal(scale=50.0, size=(n, 3)).astype(np.float32),
        rng.normal(scale=50.0, size=(n, 3)).astype(np.float32),
        rng.uniform(0, 1e6, n),
        rng.integers(0, 256, n),
        rng.integers(0, 2 ** 32, n, dtype=np.uint64),
        rng.integers(0, 2 ** 32, n, dtype=np.uint64),
        offset=offset,
    )


def canonical(labels):
    """Relabel a partition by first occurrence so partitions compare by equality."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv]


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number, ok, detail=""):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
