"""Built-in fields and reference clouds for demos, tests, and the CLI."""

from __future__ import annotations

import math

import numpy as np

from .fields import AnalyticField, parse_field_spec
from .geometry import sample_mesh_surface
from .remesh import GridSpec, marching_cubes
from .validation import as_rng, check_int

FIXTURE_SPECS: dict[str, dict] = {
    "sphere": {
        "sharpness": 50.0,
        "csg": {"op": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5},
    },
    "torus": {
        "sharpness": 50.0,
        "csg": {
            "op": "torus",
            "center": [0.0, 0.0, 0.0],
            "major_radius": 0.6,
            "minor_radius": 0.2,
        },
    },
    "two-spheres": {
        "sharpness": 50.0,
        "csg": {
            "op": "union",
            "children": [
                {"op": "sphere", "center": [-0.4, 0.0, 0.0], "radius": 0.3},
                {"op": "sphere", "center": [0.4, 0.0, 0.0], "radius": 0.3},
            ],
        },
    },
    "box-minus-sphere": {
        "sharpness": 50.0,
        "csg": {
            "op": "difference",
            "children": [
                {"op": "box", "center": [0.0, 0.0, 0.0], "half_extents": [0.5, 0.5, 0.5]},
                {"op": "sphere", "center": [0.0, 0.0, 0.5], "radius": 0.35},
            ],
        },
    },
}


def fixture_names() -> list[str]:
    return sorted(FIXTURE_SPECS)


def fixture_field(name: str) -> AnalyticField:
    if name not in FIXTURE_SPECS:
        raise KeyError(f"unknown fixture {name!r}, available: {', '.join(fixture_names())}")
    return parse_field_spec(FIXTURE_SPECS[name])


def iso_offset(tau: float, sharpness: float) -> float:
    """Signed distance at which occupancy equals tau: ln((1-tau)/tau)/c."""
    return math.log((1.0 - tau) / tau) / sharpness


def reference_cloud(name: str, count: int = 1024, tau: float = 0.2, rng=None) -> np.ndarray:
    """Uniform-by-area samples of a fixture's tau iso-surface.

    The sphere and torus use exact analytic sampling; CSG combination
    fixtures fall back to a fine re-mesh of the iso-surface.
    """
    count = check_int(count, "count", minimum=1)
    rng = as_rng(rng)
    spec = FIXTURE_SPECS.get(name)
    if spec is None:
        raise KeyError(f"unknown fixture {name!r}, available: {', '.join(fixture_names())}")
    c = spec["sharpness"]
    if name == "sphere":
        radius = spec["csg"]["radius"] + iso_offset(tau, c)
        direction = rng.standard_normal((count, 3))
        direction /= np.sqrt((direction**2).sum(axis=1))[:, None]
        return np.asarray(spec["csg"]["center"]) + radius * direction
    if name == "torus":
        big = spec["csg"]["major_radius"]
        small = spec["csg"]["minor_radius"] + iso_offset(tau, c)
        # Area element scales with big + small*cos(theta); rejection keeps
        # the sampling uniform over the surface rather than over angles.
        theta = np.empty(count)
        filled = 0
        while filled < count:
            cand = rng.uniform(-math.pi, math.pi, size=2 * (count - filled))
            accept = rng.random(cand.shape[0]) <= (big + small * np.cos(cand)) / (big + small)
            take = cand[accept][: count - filled]
            theta[filled : filled + take.shape[0]] = take
            filled += take.shape[0]
        phi = rng.uniform(-math.pi, math.pi, size=count)
        ring = big + small * np.cos(theta)
        pts = np.column_stack([ring * np.cos(phi), ring * np.sin(phi), small * np.sin(theta)])
        return np.asarray(spec["csg"]["center"]) + pts
    mesh = marching_cubes(fixture_field(name), GridSpec(resolution=96), iso=tau)
    return sample_mesh_surface(mesh, count, rng)
