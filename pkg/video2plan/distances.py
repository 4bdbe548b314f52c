# License: BSD 2 clause
"""Bounding box geometry.

Boxes are ``[x, y, w, h]`` float64 arrays with ``(x, y)`` the top-left
corner. The kernels are numba compiled; the ``box_*`` wrappers accept any
4-sequence (including :class:`video2plan.ingest.BoundingBox`).
"""
import numpy as np
import numba


@numba.njit(fastmath=True, cache=True)
def area(x):
    return x[2] * x[3]


@numba.njit(fastmath=True, cache=True)
def intersection(x, y):
    r"""Area of the intersection of two boxes.

    .. math::
        I(x, y) = \max(0, \min(x_r, y_r) - \max(x_l, y_l))
                  \cdot \max(0, \min(x_b, y_b) - \max(x_t, y_t))
    """
    width = min(x[0] + x[2], y[0] + y[2]) - max(x[0], y[0])
    if width <= 0.0:
        return 0.0
    height = min(x[1] + x[3], y[1] + y[3]) - max(x[1], y[1])
    if height <= 0.0:
        return 0.0
    return width * height


@numba.njit(fastmath=True, cache=True)
def jaccard(x, y):
    r"""Jaccard index (intersection over union) of two boxes.

    .. math::
        J(x, y) = \frac{I(x, y)}{|x| + |y| - I(x, y)}

    Defined as 0 when the union has zero area.
    """
    inter = intersection(x, y)
    union = area(x) + area(y) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@numba.njit(fastmath=True, cache=True)
def center_distance(x, y):
    """Euclidean distance between box centers."""
    dx = (x[0] + 0.5 * x[2]) - (y[0] + 0.5 * y[2])
    dy = (x[1] + 0.5 * x[3]) - (y[1] + 0.5 * y[3])
    return np.sqrt(dx * dx + dy * dy)


@numba.njit(fastmath=True, cache=True)
def diagonal(x):
    return np.sqrt(x[2] * x[2] + x[3] * x[3])


@numba.njit(cache=True)
def pairwise_intersection(boxes_a, boxes_b):
    result = np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    for i in range(boxes_a.shape[0]):
        for j in range(boxes_b.shape[0]):
            result[i, j] = intersection(boxes_a[i], boxes_b[j])
    return result


@numba.njit(cache=True)
def pairwise_jaccard(boxes_a, boxes_b):
    result = np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    for i in range(boxes_a.shape[0]):
        for j in range(boxes_b.shape[0]):
            result[i, j] = jaccard(boxes_a[i], boxes_b[j])
    return result


@numba.njit(cache=True)
def pairwise_center_distance(boxes_a, boxes_b):
    result = np.zeros((boxes_a.shape[0], boxes_b.shape[0]), dtype=np.float64)
    for i in range(boxes_a.shape[0]):
        for j in range(boxes_b.shape[0]):
            result[i, j] = center_distance(boxes_a[i], boxes_b[j])
    return result


def as_box_array(boxes):
    """Stack boxes into a C-contiguous ``(n, 4)`` float64 array."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))


def _as_box(box):
    return np.asarray(box, dtype=np.float64).reshape(4)


def box_intersection(a, b):
    return float(intersection(_as_box(a), _as_box(b)))


def box_jaccard(a, b):
    """Jaccard index of two boxes given as 4-sequences, in [0, 1]."""
    return float(jaccard(_as_box(a), _as_box(b)))


def box_center_distance(a, b):
    return float(center_distance(_as_box(a), _as_box(b)))


def box_diagonal(a):
    return float(diagonal(_as_box(a)))
