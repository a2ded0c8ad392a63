"""Cloud-to-cloud distances and a uniformity score.

Chamfer here is the squared symmetric form: mean over A of the squared
distance to the nearest point of B, plus the same with the roles swapped.
Hausdorff is the unsquared symmetric max-min distance. uniformity_cv is
the coefficient of variation (population std over mean) of each point's
mean distance to its k nearest neighbors; lower means more even spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import SpatialIndex
from .validation import check_int, check_points


def _nearest(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point of a to its nearest point in b."""
    d, _ = cKDTree(b).query(a, k=1)
    return np.atleast_1d(d)


def chamfer(a, b) -> float:
    pa = check_points(a, name="a")
    pb = check_points(b, name="b")
    d_ab = _nearest(pa, pb)
    d_ba = _nearest(pb, pa)
    return float((d_ab**2).mean() + (d_ba**2).mean())


def hausdorff(a, b) -> float:
    pa = check_points(a, name="a")
    pb = check_points(b, name="b")
    return float(max(_nearest(pa, pb).max(), _nearest(pb, pa).max()))


def nn_gap(points) -> float:
    """Largest nearest-neighbor distance within one cloud (coverage gap)."""
    pts = check_points(points, min_points=2)
    _, dist = SpatialIndex(pts).knn_graph(1)
    return float(dist.max())


def uniformity_cv(points, k: int = 5) -> float:
    pts = check_points(points, min_points=check_int(k, "k", minimum=1) + 1)
    _, dist = SpatialIndex(pts).knn_graph(k)
    per_point = dist.mean(axis=1)
    mean = per_point.mean()
    if mean == 0.0:
        return 0.0  # every point coincides; spacing is trivially even
    return float(per_point.std() / mean)


@dataclass(frozen=True)
class MetricsReport:
    chamfer: float
    hausdorff: float
    uniformity_cv: float
    count_a: int
    count_b: int


def evaluate(a, b, k: int = 5) -> MetricsReport:
    """All metrics of cloud a against reference b; uniformity is of a."""
    pa = check_points(a, name="a")
    pb = check_points(b, name="b")
    return MetricsReport(
        chamfer=chamfer(pa, pb),
        hausdorff=hausdorff(pa, pb),
        uniformity_cv=uniformity_cv(pa, k),
        count_a=pa.shape[0],
        count_b=pb.shape[0],
    )
