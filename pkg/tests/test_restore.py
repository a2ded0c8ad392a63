"""Losses, Adam, and the coordinate-optimization restore loop."""

import dataclasses
import math

import numpy as np
import pytest

from oracles import adam_brute, fd_gradient, rel_error
from pcrestore.errors import TooFewPoints
from pcrestore.fixtures import iso_offset, reference_cloud
from pcrestore.geometry import SpatialIndex
from pcrestore.restore import (
    AdamState,
    OptimizationRestorer,
    RestorationConfig,
    adam_update,
    config_with,
    cross_entropy,
    distribution_loss,
    geometry_loss,
    restore,
)


def test_config_defaults_are_published_values():
    cfg = RestorationConfig()
    assert cfg.tau == 0.2
    assert cfg.lam == 500.0
    assert cfg.h == 0.03
    assert cfg.k_rep == 5
    assert cfg.learning_rate == 0.01
    assert cfg.iterations == 200
    assert cfg.target_count == 1024
    assert cfg.knn_refresh == 1
    assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)


def test_config_validation():
    with pytest.raises(ValueError):
        RestorationConfig(tau=0.0)
    with pytest.raises(ValueError):
        RestorationConfig(lam=-1.0)
    with pytest.raises(ValueError):
        RestorationConfig(h=0.0)
    with pytest.raises(ValueError):
        RestorationConfig(iterations=0)
    RestorationConfig(lam=0.0)  # geometry-only runs are legal


def test_config_with_replaces_fields():
    cfg = config_with(RestorationConfig(), lam=100.0, iterations=5)
    assert cfg.lam == 100.0
    assert cfg.iterations == 5
    assert cfg.tau == 0.2


# --- cross entropy ---------------------------------------------------------


def test_cross_entropy_frozen_values():
    assert cross_entropy(0.2, 0.2) == pytest.approx(0.5004024235381879, abs=1e-15)
    assert cross_entropy(0.5, 0.2) == pytest.approx(math.log(2.0), abs=1e-15)


def test_cross_entropy_minimized_at_target():
    taus = np.linspace(0.05, 0.95, 7)
    ps = np.linspace(0.01, 0.99, 401)
    for tau in taus:
        vals = cross_entropy(ps, tau)
        assert abs(ps[np.argmin(vals)] - tau) < 0.005


def test_cross_entropy_derivative_zero_at_target():
    eps = 1e-7
    slope = (cross_entropy(0.2 + eps, 0.2) - cross_entropy(0.2 - eps, 0.2)) / (2 * eps)
    assert abs(slope) < 1e-6


# --- geometry loss ---------------------------------------------------------


def test_geometry_loss_on_iso_surface(sphere_field):
    """Points sitting on the tau iso-surface give N * ce(tau, tau), grads ~ 0."""
    rng = np.random.default_rng(0)
    pts = reference_cloud("sphere", 64, rng=rng)
    loss, grads = geometry_loss(sphere_field, pts, 0.2)
    assert loss == pytest.approx(64 * 0.5004024235381879, rel=1e-9)
    assert np.abs(grads).max() < 1e-8


def test_geometry_loss_plateau_gradient_zero(sphere_field):
    """Deep inside the shape the clamp is active and the gradient vanishes."""
    loss, grads = geometry_loss(sphere_field, np.zeros((1, 3)), 0.2)
    np.testing.assert_array_equal(grads, np.zeros((1, 3)))
    assert loss > 0


def test_geometry_loss_fd(sphere_field, torus_field):
    rng = np.random.default_rng(1)
    for field in (sphere_field, torus_field):
        pts = rng.uniform(-0.9, 0.9, size=(32, 3))
        keep = field.smoothness_margin(pts) > 1e-3
        pts = pts[keep]
        _, grads = geometry_loss(field, pts, 0.2)
        fd = fd_gradient(lambda q: geometry_loss(field, q, 0.2)[0], pts)
        assert rel_error(grads, fd) <= 1e-4


# --- distribution loss -----------------------------------------------------


def test_distribution_loss_two_points_at_h():
    """The symmetric double sum gives 2 * (-h/e) at separation h."""
    pts = np.array([[0.0, 0, 0], [0.03, 0, 0]])
    loss, grads = distribution_loss(pts, k=1, h=0.03)
    assert loss == pytest.approx(-0.02207276647028654, abs=1e-15)
    # attraction at r = h: gradient pushes the pair together under descent
    assert grads[0, 0] == pytest.approx(-2 * math.exp(-1.0), rel=1e-12)
    assert grads[1, 0] == pytest.approx(+2 * math.exp(-1.0), rel=1e-12)


def test_distribution_loss_coincident_floor():
    """Coincident duplicates produce zero loss but finite gradients."""
    pts = np.zeros((2, 3))
    loss, grads = distribution_loss(pts, k=1, h=0.03)
    assert loss == 0.0
    assert np.all(np.isfinite(grads))


def test_distribution_loss_far_pairs_vanish():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.5, 0]])  # >= 10h apart
    loss, _ = distribution_loss(pts, k=1, h=0.03)
    assert abs(loss) < 1e-30


def test_distribution_loss_gradient_flows_to_both_endpoints():
    """An asymmetric neighbor graph still moves the pointed-at point."""
    pts = np.array([[0.0, 0, 0], [0.02, 0, 0], [0.05, 0, 0]])
    neighbors = np.array([[1], [2], [1]])  # nobody lists point 0, 1 listed twice
    _, grads = distribution_loss(pts, k=1, h=0.03, neighbors=neighbors)
    assert abs(grads[0]).max() > 0  # receives flow from the 0->1 term


def test_distribution_loss_fd_frozen_graph():
    rng = np.random.default_rng(2)
    pts = reference_cloud("sphere", 32, rng=rng) + 0.01 * rng.standard_normal((32, 3))
    neighbors, _ = SpatialIndex(pts).knn_graph(5)
    _, grads = distribution_loss(pts, 5, 0.03, neighbors)
    fd = fd_gradient(lambda q: distribution_loss(q, 5, 0.03, neighbors)[0], pts)
    assert rel_error(grads, fd) <= 1e-4


def test_distribution_loss_too_few_points():
    with pytest.raises(TooFewPoints):
        distribution_loss(np.zeros((4, 3)), k=5, h=0.03)


def test_distribution_loss_attraction_sign_change():
    """Pairs inside h/sqrt(2) repel, pairs outside attract; the zero sits there."""
    h = 0.03
    flip = h / math.sqrt(2.0)
    for r, sign in ((0.5 * flip, +1.0), (1.5 * flip, -1.0)):
        pts = np.array([[0.0, 0, 0], [r, 0, 0]])
        _, grads = distribution_loss(pts, k=1, h=h)
        # descent step moves point 1 along -grads[1]; outward motion is +x
        assert np.sign(-grads[1, 0]) == sign


# --- adam ------------------------------------------------------------------


def test_adam_zero_gradient_fixed_point():
    pts = np.random.default_rng(3).random((8, 3))
    state = AdamState.zeros(pts.shape)
    new_state, new_pts = adam_update(state, pts, np.zeros_like(pts), 0.01)
    np.testing.assert_array_equal(new_pts, pts)
    assert new_state.t == 1


def test_adam_first_step_magnitude():
    """First bias-corrected step is lr * g/(|g| + eps), nearly lr exactly."""
    pts = np.zeros((1, 3))
    grads = np.array([[1.0, 0.0, 0.0]])
    _, new_pts = adam_update(AdamState.zeros(pts.shape), pts, grads, 0.01)
    # bias correction makes m_hat = v_hat = 1 on the first step
    assert new_pts[0, 0] == (0.01 * 1.0) / (1.0 + 1e-8) * -1.0
    assert new_pts[0, 0] == pytest.approx(-0.01, abs=1e-9)


def test_adam_matches_scalar_oracle():
    """Five steps on f(x) = x^2 track an independently coded Adam."""
    lr = 0.05
    x = np.array([[1.0, 0.0, 0.0]])
    state = AdamState.zeros(x.shape)
    for _ in range(5):
        g = np.zeros_like(x)
        g[0, 0] = 2.0 * x[0, 0]
        state, x = adam_update(state, x, g, lr)
    want = adam_brute(1.0, lambda v: 2.0 * v, lr, 5)
    assert x[0, 0] == pytest.approx(want, abs=1e-12)


# --- restore loop ----------------------------------------------------------


def test_restore_single_point_reaches_iso_surface(sphere_field):
    """lam=0: a point at radius 0.6 lands on the tau iso-surface."""
    cfg = config_with(RestorationConfig(), lam=0.0, target_count=1)
    trace = restore(np.array([[0.6, 0.0, 0.0]]), sphere_field, cfg, rng=0)
    p = sphere_field.occupancy(trace.points[0])
    assert abs(p - 0.2) <= 0.02


def test_restore_total_gradient_fd(sphere_field):
    """One combined-objective step agrees with finite differences."""
    rng = np.random.default_rng(4)
    pts = reference_cloud("sphere", 32, rng=rng) + 0.01 * rng.standard_normal((32, 3))
    neighbors, _ = SpatialIndex(pts).knn_graph(5)
    lam = 500.0

    def total(q):
        g, _ = geometry_loss(sphere_field, q, 0.2)
        d, _ = distribution_loss(q, 5, 0.03, neighbors)
        return g + lam * d

    _, gg = geometry_loss(sphere_field, pts, 0.2)
    _, dg = distribution_loss(pts, 5, 0.03, neighbors)
    assert rel_error(gg + lam * dg, fd_gradient(total, pts)) <= 1e-4


def test_restore_trace_shape_and_total(sphere_field, small_sphere_cloud):
    cfg = config_with(RestorationConfig(), iterations=10, target_count=128)
    trace = restore(small_sphere_cloud, sphere_field, cfg, rng=1)
    assert len(trace) == 10
    assert trace.points.shape == (128, 3)
    np.testing.assert_allclose(trace.total, trace.geometry + cfg.lam * trace.distribution)


def test_restore_lam_zero_skips_repulsion(sphere_field, small_sphere_cloud):
    cfg = config_with(RestorationConfig(), lam=0.0, iterations=5, target_count=128)
    trace = restore(small_sphere_cloud, sphere_field, cfg, rng=2)
    np.testing.assert_array_equal(trace.distribution, np.zeros(5))


def test_restore_small_cloud_needs_lam_zero(sphere_field):
    pts = np.random.default_rng(5).random((4, 3))
    cfg = config_with(RestorationConfig(), target_count=4, iterations=2)
    with pytest.raises(TooFewPoints):
        restore(pts, sphere_field, cfg, rng=3)
    ok = config_with(cfg, lam=0.0)
    assert restore(pts, sphere_field, ok, rng=3).points.shape == (4, 3)


def test_restore_resamples_and_jitters_duplicates(sphere_field):
    """Upsampled duplicates separate by at most the 1e-4 jitter radius."""
    pts = reference_cloud("sphere", 32, rng=np.random.default_rng(6))
    cfg = config_with(RestorationConfig(), iterations=1, target_count=64, lam=0.0)
    trace = restore(pts, sphere_field, cfg, rng=4)
    assert trace.points.shape == (64, 3)


def test_restore_deterministic(sphere_field, small_sphere_cloud):
    cfg = config_with(RestorationConfig(), iterations=20, target_count=128)
    a = restore(small_sphere_cloud, sphere_field, cfg, rng=7)
    b = restore(small_sphere_cloud, sphere_field, cfg, rng=7)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.total, b.total)


def test_restore_loss_decreases_endpoint(sphere_field, small_sphere_cloud):
    """No monotonicity claim, but the endpoint beats the start."""
    rng = np.random.default_rng(8)
    noisy = small_sphere_cloud + 0.02 * rng.standard_normal(small_sphere_cloud.shape)
    cfg = config_with(RestorationConfig(), iterations=100, target_count=128)
    trace = restore(noisy, sphere_field, cfg, rng=9)
    assert trace.total[-1] < trace.total[0]


def test_restore_flat_plateau_point_stays(sphere_field):
    """A point with exactly zero gradient every iteration must not move."""
    start = np.array([[0.0, 0.0, 0.0]])  # clamp plateau at the sphere center
    cfg = config_with(RestorationConfig(), lam=0.0, target_count=1)
    trace = restore(start, sphere_field, cfg, rng=10)
    assert np.linalg.norm(trace.points - start) < 1e-6


def test_restorer_estimator_roundtrip(sphere_field, small_sphere_cloud):
    est = OptimizationRestorer(field=sphere_field, iterations=5, target_count=128, seed=11)
    out = est.fit_transform(small_sphere_cloud)
    assert out.shape == (128, 3)
    assert len(est.trace_) == 5
    params = est.get_params()
    assert params["lam"] == 500.0
    assert params["iterations"] == 5


def test_restorer_clone_compatible(sphere_field):
    from sklearn.base import clone

    est = OptimizationRestorer(field=sphere_field, lam=100.0)
    c = clone(est)
    a = est.get_params()
    b = c.get_params()
    # clone deep-copies the field object; compare it by spec instead
    assert b.pop("field").to_spec() == a.pop("field").to_spec()
    assert a == b


def test_iso_offset_helper():
    assert iso_offset(0.2, 50.0) == pytest.approx(math.log(4.0) / 50.0, abs=1e-15)
