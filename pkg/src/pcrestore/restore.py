"""Occupancy-guided point cloud restoration.

Points are optimized so their occupancy approaches the iso level tau
(geometry term) while neighbors push each other apart (distribution term):

    total = geometry + lambda * distribution

The geometry term is a soft-target cross entropy per point. The
distribution term sums -r * exp(-r^2 / h^2) over each point's k nearest
neighbors, which rewards spreading until neighbor distances pass h. Both
terms have closed-form gradients; Adam with bias correction does the
stepping. Neighbor indices are rebuilt every knn_refresh iterations and
held fixed in between.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import TooFewPoints
from .fields import OccupancyField
from .geometry import SpatialIndex, resample_to_count
from .validation import (
    as_rng,
    check_int,
    check_points,
    check_positive,
    check_unit_interval,
)

_DIST_FLOOR = 1e-9
_DUP_JITTER = 1e-4


@dataclass(frozen=True)
class RestorationConfig:
    tau: float = 0.2
    lam: float = 500.0
    h: float = 0.03
    k_rep: int = 5
    learning_rate: float = 0.01
    iterations: int = 200
    target_count: int = 1024
    knn_refresh: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        check_unit_interval(self.tau, "tau", low_open=True, high_open=True)
        check_positive(self.lam, "lam", strict=False)
        check_positive(self.h, "h")
        check_int(self.k_rep, "k_rep", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_int(self.iterations, "iterations", minimum=1)
        check_int(self.target_count, "target_count", minimum=1)
        check_int(self.knn_refresh, "knn_refresh", minimum=1)
        check_unit_interval(self.beta1, "beta1", high_open=True)
        check_unit_interval(self.beta2, "beta2", high_open=True)
        check_positive(self.adam_eps, "adam_eps")


def cross_entropy(p, tau: float):
    """Soft-target cross entropy -(tau ln p + (1 - tau) ln(1 - p))."""
    p = np.asarray(p, dtype=np.float64)
    return -(tau * np.log(p) + (1.0 - tau) * np.log1p(-p))


def geometry_loss(field: OccupancyField, points, tau: float) -> tuple[float, np.ndarray]:
    """Sum of per-point cross entropies and its gradient wrt the points.

    dL/dp = (p - tau) / (p (1 - p)), chained through the field gradient.
    In unclipped regions of an analytic field this collapses to
    -c (p - tau) grad d, so the gradient stays bounded by the sharpness.
    """
    pts = check_points(points)
    p = field.occupancy(pts)
    loss = float(cross_entropy(p, tau).sum())
    dl_dp = (p - tau) / (p * (1.0 - p))
    return loss, dl_dp[:, None] * field.gradient(pts)


def distribution_loss(
    points, k: int = 5, h: float = 0.03, neighbors: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Repulsion term over each point's k nearest neighbors and its gradient.

    Per pair the term is -r * exp(-r^2 / h^2) with r the pair distance.
    The gradient flows to both endpoints. Distances are floored at 1e-9
    when normalizing directions, so exactly coincident pairs contribute a
    zero direction (hence the duplicate jitter at restore init).

    Pass `neighbors` (N, k) to reuse a frozen neighbor table; otherwise the
    exact kNN graph is built here. Raises TooFewPoints when N <= k.
    """
    pts = check_points(points)
    k = check_int(k, "k", minimum=1)
    h = check_positive(h, "h")
    if pts.shape[0] <= k:
        raise TooFewPoints(f"distribution_loss needs more than k={k} points")
    if neighbors is None:
        neighbors, _ = SpatialIndex(pts).knn_graph(k)
    diff = pts[:, None, :] - pts[neighbors]
    r = np.sqrt((diff * diff).sum(axis=2))
    w = np.exp(-(r * r) / (h * h))
    loss = float(-(r * w).sum())
    # d/dr of -r e^{-r^2/h^2} = e^{-r^2/h^2} (2 r^2 / h^2 - 1)
    dterm = w * (2.0 * r * r / (h * h) - 1.0)
    u = diff / np.maximum(r, _DIST_FLOOR)[:, :, None]
    pair_grad = dterm[:, :, None] * u
    grad = pair_grad.sum(axis=1)
    np.add.at(grad, neighbors.reshape(-1), -pair_grad.reshape(-1, 3))
    return loss, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)


def adam_update(
    state: AdamState,
    points: np.ndarray,
    grads: np.ndarray,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam step; returns the new state and points."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_points = points - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m=m, v=v, t=t), new_points


@dataclass(frozen=True)
class RestorationTrace:
    """Optimization record: per-iteration losses plus the final points."""

    geometry: np.ndarray
    distribution: np.ndarray
    total: np.ndarray
    points: np.ndarray

    def __len__(self) -> int:
        return int(self.total.shape[0])


def restore(
    points, field: OccupancyField, config: RestorationConfig | None = None, rng=None
) -> RestorationTrace:
    """Optimize a cloud onto the field's tau iso-surface.

    The cloud is first resampled to config.target_count; duplicated points
    receive a tiny uniform-ball jitter (radius 1e-4) so the repulsion term
    can separate them. With lam == 0 the distribution term is skipped and
    recorded as 0.0, which also lifts the count > k_rep requirement.

    Deterministic for a fixed rng seed.
    """
    cfg = config or RestorationConfig()
    pts = check_points(points)
    rng = as_rng(rng)
    n_in = pts.shape[0]
    pts = resample_to_count(pts, cfg.target_count, rng)
    if n_in < cfg.target_count:
        dup = pts.shape[0] - n_in
        direction = rng.standard_normal((dup, 3))
        direction /= np.maximum(
            np.sqrt((direction**2).sum(axis=1))[:, None], _DIST_FLOOR
        )
        radius = _DUP_JITTER * rng.random(dup) ** (1.0 / 3.0)
        pts = pts.copy()
        pts[n_in:] += direction * radius[:, None]
    else:
        pts = pts.copy()

    use_repulsion = cfg.lam > 0.0
    if use_repulsion and pts.shape[0] <= cfg.k_rep:
        raise TooFewPoints(
            f"restore with lam > 0 needs more than k_rep={cfg.k_rep} points"
        )

    state = AdamState.zeros(pts.shape)
    g_hist = np.zeros(cfg.iterations)
    d_hist = np.zeros(cfg.iterations)
    neighbors = None
    for it in range(cfg.iterations):
        g_loss, grad = geometry_loss(field, pts, cfg.tau)
        d_loss = 0.0
        if use_repulsion:
            if neighbors is None or it % cfg.knn_refresh == 0:
                neighbors, _ = SpatialIndex(pts).knn_graph(cfg.k_rep)
            d_loss, d_grad = distribution_loss(pts, cfg.k_rep, cfg.h, neighbors)
            grad = grad + cfg.lam * d_grad
        state, pts = adam_update(
            state, pts, grad, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
        )
        g_hist[it] = g_loss
        d_hist[it] = d_loss
    return RestorationTrace(
        geometry=g_hist,
        distribution=d_hist,
        total=g_hist + cfg.lam * d_hist,
        points=pts,
    )


class OptimizationRestorer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around restore().

    Parameters mirror RestorationConfig plus the guiding field and a seed.
    transform(X) returns the restored cloud and stores the trace as
    `trace_`.
    """

    def __init__(
        self,
        field: OccupancyField | None = None,
        tau: float = 0.2,
        lam: float = 500.0,
        h: float = 0.03,
        k_rep: int = 5,
        learning_rate: float = 0.01,
        iterations: int = 200,
        target_count: int = 1024,
        knn_refresh: int = 1,
        seed: int | None = 0,
    ):
        self.field = field
        self.tau = tau
        self.lam = lam
        self.h = h
        self.k_rep = k_rep
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.target_count = target_count
        self.knn_refresh = knn_refresh
        self.seed = seed

    def _config(self) -> RestorationConfig:
        return RestorationConfig(
            tau=self.tau,
            lam=self.lam,
            h=self.h,
            k_rep=self.k_rep,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            target_count=self.target_count,
            knn_refresh=self.knn_refresh,
        )

    def fit(self, X=None, y=None):
        if not isinstance(self.field, OccupancyField):
            raise ValueError("field must be an OccupancyField instance")
        self._config()  # validate parameters
        self._fitted = True
        return self

    def transform(self, X) -> np.ndarray:
        if not getattr(self, "_fitted", False):
            self.fit()
        trace = restore(X, self.field, self._config(), rng=as_rng(self.seed))
        self.trace_ = trace
        return trace.points


def config_with(base: RestorationConfig, **overrides) -> RestorationConfig:
    """Return a copy of a config with the given fields replaced."""
    return replace(base, **overrides)
