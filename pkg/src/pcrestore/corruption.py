"""Synthetic attack effects: outliers, on-surface jitter, part removal,
smooth deformation, and an occupancy-aware adaptive perturbation.

Every generator takes an rng (seed-like or Generator) and is deterministic
for a fixed seed. Input clouds are never mutated.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CloudAnnihilated, FlatGradient
from .fields import OccupancyField
from .metrics import chamfer
from .restore import cross_entropy
from .validation import (
    as_rng,
    check_int,
    check_points,
    check_positive,
    check_unit_interval,
)

_FLAT_EPS = 1e-9


def _unit_rows(vec: np.ndarray) -> np.ndarray:
    norm = np.sqrt((vec * vec).sum(axis=1, keepdims=True))
    return vec / np.maximum(norm, _FLAT_EPS)


def add_outliers(
    points, fraction: float = 0.1, magnitude: float = 0.3, rng=None
) -> tuple[np.ndarray, np.ndarray]:
    """Displace ceil(fraction * N) points far off the shape.

    Victims are chosen without replacement; each moves along a uniform
    random direction by a distance drawn from U(magnitude / 2, magnitude).
    Returns (corrupted cloud, victim indices); order and count preserved.
    """
    pts = check_points(points).copy()
    fraction = check_unit_interval(fraction, "fraction", low_open=True)
    magnitude = check_positive(magnitude, "magnitude", strict=False)
    rng = as_rng(rng)
    n_out = math.ceil(fraction * pts.shape[0])
    if n_out == 0:
        return pts, np.empty(0, dtype=np.int64)
    victims = np.sort(rng.choice(pts.shape[0], size=n_out, replace=False))
    directions = _unit_rows(rng.standard_normal((n_out, 3)))
    dist = rng.uniform(magnitude / 2.0, magnitude, size=n_out)
    pts[victims] += directions * dist[:, None]
    return pts, victims


def jitter_on_surface(points, field: OccupancyField, sigma: float = 0.02, rng=None) -> np.ndarray:
    """Slide points along the surface: tangential Gaussian offsets, then a
    bisection back to each point's original occupancy level.

    The tangent plane is defined by the field gradient at the original
    point; FlatGradient is raised when that gradient is shorter than 1e-9.
    The re-projection runs at most 40 bisection steps to a 1e-6 occupancy
    tolerance; the result is guaranteed within 1e-4 of the original
    occupancy. sigma == 0 returns an exact copy.
    """
    pts = check_points(points).copy()
    sigma = check_positive(sigma, "sigma", strict=False)
    if sigma == 0.0:
        return pts
    rng = as_rng(rng)

    p0 = np.atleast_1d(field.occupancy(pts))
    grad = np.atleast_2d(field.gradient(pts))
    gnorm = np.sqrt((grad * grad).sum(axis=1))
    if (gnorm < _FLAT_EPS).any():
        i = int(np.argmin(gnorm))
        raise FlatGradient(
            f"gradient norm {gnorm[i]:.3e} at point {i}; tangent plane undefined"
        )
    normal = grad / gnorm[:, None]
    offset = sigma * rng.standard_normal(pts.shape)
    offset -= (offset * normal).sum(axis=1, keepdims=True) * normal
    moved = pts + offset

    # Walk each point back to its original occupancy along the local
    # gradient direction: expand a bracket, then bisect.
    direction = np.atleast_2d(field.gradient(moved))
    dnorm = np.sqrt((direction * direction).sum(axis=1))
    flat = dnorm < _FLAT_EPS
    direction[flat] = normal[flat]
    direction = _unit_rows(direction)

    def resid(t: np.ndarray) -> np.ndarray:
        return np.atleast_1d(field.occupancy(moved + t[:, None] * direction)) - p0

    tol = 1e-6
    r0 = resid(np.zeros(pts.shape[0]))
    active = np.abs(r0) > tol
    # Occupancy decreases along -gradient; overshoot points move back.
    sign = np.where(r0 > 0.0, -1.0, 1.0)
    lo = np.zeros(pts.shape[0])
    hi = np.full(pts.shape[0], max(sigma, 1e-3))
    bracketed = ~active
    for _ in range(32):
        if bracketed.all():
            break
        probe = np.where(bracketed, lo, hi)
        r = resid(sign * probe)
        newly = ~bracketed & (np.sign(r) != np.sign(r0))
        bracketed |= newly
        grow = ~bracketed
        lo[grow] = hi[grow]
        hi[grow] *= 2.0
    if not bracketed.all():
        raise FlatGradient(
            "could not bracket the original occupancy level along the gradient"
        )
    tstar = np.zeros(pts.shape[0])
    for _ in range(40):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        r = resid(sign * mid)
        done = active & (np.abs(r) <= tol)
        tstar[done] = mid[done]
        active &= ~done
        same_side = np.sign(r) == np.sign(r0)
        lo = np.where(active & same_side, mid, lo)
        hi = np.where(active & ~same_side, mid, hi)
    tstar[active] = 0.5 * (lo[active] + hi[active])
    result = moved + (sign * tstar)[:, None] * direction
    final = np.abs(np.atleast_1d(field.occupancy(result)) - p0)
    if final.max() > 1e-4:
        raise FlatGradient(
            f"re-projection left occupancy error {final.max():.3e} > 1e-4"
        )
    return result


def remove_local_part(
    points, radius: float = 0.3, mode: str = "random", rng=None
) -> tuple[np.ndarray, np.ndarray]:
    """Delete every point within `radius` of a seed point.

    mode "random" picks the seed uniformly from the cloud; "farthest" uses
    the point farthest from the centroid. Returns (remaining, removed
    indices). Raises CloudAnnihilated when nothing survives.
    """
    pts = check_points(points)
    radius = check_positive(radius, "radius")
    if mode not in ("random", "farthest"):
        raise ValueError(f"mode must be 'random' or 'farthest', got {mode!r}")
    if mode == "random":
        seed_idx = int(as_rng(rng).integers(0, pts.shape[0]))
    else:
        rel = pts - pts.mean(axis=0)
        seed_idx = int(((rel * rel).sum(axis=1)).argmax())
    d = np.sqrt(((pts - pts[seed_idx]) ** 2).sum(axis=1))
    removed = np.nonzero(d <= radius)[0]
    if removed.shape[0] == pts.shape[0]:
        raise CloudAnnihilated(f"radius {radius} swallowed all {pts.shape[0]} points")
    keep = np.ones(pts.shape[0], dtype=bool)
    keep[removed] = False
    return pts[keep], removed


def deform(points, amplitude: float = 0.1, frequency: float = 4.0, axis=(0, 0, 1), rng=None) -> np.ndarray:
    """Bend the cloud with a sine wave: x + amplitude * sin(frequency * <x, axis>) * perp.

    `perp` is a unit vector orthogonal to the (normalized) axis, drawn
    deterministically from the rng.
    """
    pts = check_points(points)
    amplitude = check_positive(amplitude, "amplitude", strict=False)
    frequency = check_positive(frequency, "frequency", strict=False)
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = float(np.sqrt(axis @ axis))
    if norm < _FLAT_EPS:
        raise ValueError("axis must be nonzero")
    axis = axis / norm
    rng = as_rng(rng)
    perp = rng.standard_normal(3)
    perp -= (perp @ axis) * axis
    while np.sqrt(perp @ perp) < 1e-6:
        perp = rng.standard_normal(3)
        perp -= (perp @ axis) * axis
    perp /= np.sqrt(perp @ perp)
    phase = np.sin(frequency * (pts @ axis))
    return pts + amplitude * phase[:, None] * perp


def adaptive_attack(
    points,
    field: OccupancyField,
    tau: float = 0.2,
    budget: float = 2e-3,
    iterations: int = 40,
    step: float = 0.02,
    rng=None,
) -> np.ndarray:
    """Gradient ascent on the summed cross entropy, kept inside a Chamfer budget.

    Each step climbs the occupancy cross-entropy gradient, then contracts
    the cloud uniformly toward the originals (bisection on the contraction
    factor) until the squared Chamfer distance to the input is at most
    `budget`. budget == 0 returns an exact copy. The rng argument keeps the
    corruption call signature uniform; the attack itself is deterministic.
    """
    del rng  # deterministic; parameter kept for signature symmetry
    orig = check_points(points).copy()
    check_unit_interval(tau, "tau", low_open=True, high_open=True)
    budget = check_positive(budget, "budget", strict=False)
    check_int(iterations, "iterations", minimum=0)
    step = check_positive(step, "step")
    if budget == 0.0 or iterations == 0:
        return orig.copy()

    pts = orig.copy()
    for _ in range(iterations):
        p = np.atleast_1d(field.occupancy(pts))
        dl_dp = (p - tau) / (p * (1.0 - p))
        pts = pts + step * dl_dp[:, None] * field.gradient(pts)
        if chamfer(pts, orig) > budget:
            lo, hi = 0.0, 1.0  # chamfer(orig)=0 <= budget, so lo stays feasible
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if chamfer(orig + mid * (pts - orig), orig) <= budget:
                    lo = mid
                else:
                    hi = mid
            pts = orig + lo * (pts - orig)
    # contraction can undo the ascent on awkward inputs; never hand back
    # something easier for the defense than the original
    if mean_cross_entropy(pts, field, tau) < mean_cross_entropy(orig, field, tau):
        return orig.copy()
    return pts


def mean_cross_entropy(points, field: OccupancyField, tau: float = 0.2) -> float:
    """Mean per-point cross entropy against the iso level tau."""
    pts = check_points(points)
    return float(cross_entropy(np.atleast_1d(field.occupancy(pts)), tau).mean())
