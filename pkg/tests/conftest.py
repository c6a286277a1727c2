import numpy as np
import pytest

from voxloc.kernels import available_backends


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def backend_params():
    return [pytest.param(mod, id=name) for name, mod in sorted(available_backends().items())]


@pytest.fixture(params=backend_params())
def kernel_backend(request):
    return request.param


def brute_radius(points: np.ndarray, q: np.ndarray, r: float) -> np.ndarray:
    """Independent linear-scan oracle: rows of points strictly within r of q."""
    if points.size == 0:
        return np.empty((0, 3))
    d2 = np.sum((points - q) ** 2, axis=1)
    return points[d2 < r * r]


def grid_dedup(points: np.ndarray, anchor: np.ndarray, cell: float) -> np.ndarray:
    """Independent first-wins grid downsampling oracle."""
    seen = set()
    kept = []
    keys = np.floor((points - anchor) / cell).astype(np.int64)
    for i in range(points.shape[0]):
        k = (keys[i, 0], keys[i, 1], keys[i, 2])
        if k not in seen:
            seen.add(k)
            kept.append(points[i])
    return np.asarray(kept) if kept else np.empty((0, 3))


def as_point_set(points: np.ndarray) -> set:
    return {tuple(row) for row in np.asarray(points)}
