"""Statistical outlier removal.

Each point's score is its mean Euclidean distance to its k nearest
neighbors (self excluded). Points survive when their score is at most
mean + alpha * std of all scores, where std is the population standard
deviation. Boundary ties are retained and the original point order is
preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin
import numpy as np

from .geometry import SpatialIndex
from .validation import check_int, check_points, check_positive


@dataclass(frozen=True)
class SorConfig:
    k: int = 2
    alpha: float = 1.1

    def __post_init__(self):
        check_int(self.k, "k", minimum=1)
        check_positive(self.alpha, "alpha", strict=False)


def sor_scores(points, k: int = 2) -> np.ndarray:
    """Mean distance from each point to its k nearest neighbors."""
    pts = check_points(points, min_points=k + 1)
    _, dist = SpatialIndex(pts).knn_graph(k)
    return dist.mean(axis=1)


def sor_filter(points, config: SorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Apply the filter; returns (kept points, removed indices).

    Raises TooFewPoints when the cloud has fewer than k + 1 points.
    """
    cfg = config or SorConfig()
    pts = check_points(points, min_points=cfg.k + 1)
    d = sor_scores(pts, cfg.k)
    threshold = d.mean() + cfg.alpha * d.std()
    keep = d <= threshold
    return pts[keep], np.nonzero(~keep)[0]


class StatisticalOutlierFilter(TransformerMixin, BaseEstimator):
    """Estimator wrapper around sor_filter.

    Parameters
    ----------
    k : int, default=2
        Neighbor count for the per-point mean distance score.
    alpha : float, default=1.1
        Retention threshold in population standard deviations above the
        mean score.

    Attributes
    ----------
    kept_indices_ : ndarray
        Indices into the last transformed cloud that survived.
    removed_indices_ : ndarray
        Indices that were filtered out.
    """

    def __init__(self, k: int = 2, alpha: float = 1.1):
        self.k = k
        self.alpha = alpha

    def fit(self, X=None, y=None):
        SorConfig(self.k, self.alpha)  # validate parameters
        self._fitted = True
        return self

    def transform(self, X) -> np.ndarray:
        if not getattr(self, "_fitted", False):
            self.fit()
        kept, removed = sor_filter(X, SorConfig(self.k, self.alpha))
        n = check_points(X).shape[0]
        self.removed_indices_ = removed
        self.kept_indices_ = np.setdiff1d(np.arange(n), removed)
        return kept
