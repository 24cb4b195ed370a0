import numpy as np

from . import USE_NUMBA, njit


def _iou_matrix_numpy(a, b):
    # a: (n, 4), b: (m, 4) in (cx, cy, w, h)
    ax0 = a[:, 0] - a[:, 2] / 2
    ax1 = a[:, 0] + a[:, 2] / 2
    ay0 = a[:, 1] - a[:, 3] / 2
    ay1 = a[:, 1] + a[:, 3] / 2
    bx0 = b[:, 0] - b[:, 2] / 2
    bx1 = b[:, 0] + b[:, 2] / 2
    by0 = b[:, 1] - b[:, 3] / 2
    by1 = b[:, 1] + b[:, 3] / 2
    iw = np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :])
    ih = np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    # areas from corner spans so that iou(a, a) == 1 exactly
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def _iou_matrix_loops(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax0 = a[i, 0] - a[i, 2] / 2
        ax1 = a[i, 0] + a[i, 2] / 2
        ay0 = a[i, 1] - a[i, 3] / 2
        ay1 = a[i, 1] + a[i, 3] / 2
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(m):
            bx0 = b[j, 0] - b[j, 2] / 2
            bx1 = b[j, 0] + b[j, 2] / 2
            by0 = b[j, 1] - b[j, 3] / 2
            by1 = b[j, 1] + b[j, 3] / 2
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            out[i, j] = inter / (area_a + (bx1 - bx0) * (by1 - by0) - inter)
    return out


_iou_matrix_numba = njit(_iou_matrix_loops)


def iou_matrix(a, b):
    """Pairwise IOU between two stacks of center-form boxes."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if USE_NUMBA:
        return _iou_matrix_numba(a, b)
    return _iou_matrix_numpy(a, b)
