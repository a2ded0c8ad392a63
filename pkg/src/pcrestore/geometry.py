"""Core point and mesh geometry: kNN queries, normalization, resampling.

The kNN wrapper pins down semantics a raw kd-tree leaves loose: distances
are recomputed in float64, neighbors are ordered by (distance, index), and
self-exclusion means the member's index, not its coordinates, so coincident
duplicates stay valid neighbors of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud, EmptyMesh, TooFewPoints
from .validation import as_rng, check_int, check_points


@dataclass(frozen=True)
class NormalizationTransform:
    """Centroid shift and uniform scale mapping a cloud into the unit sphere."""

    centroid: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (check_points(points) - self.centroid) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return check_points(points) * self.scale + self.centroid


def normalize_unit_sphere(points) -> tuple[np.ndarray, NormalizationTransform]:
    """Center a cloud at its centroid and scale the farthest point to radius 1.

    Returns (normalized, transform); transform.invert undoes the mapping
    exactly up to float64 arithmetic. Raises DegenerateCloud when all points
    coincide (scale would be zero).
    """
    pts = check_points(points)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.sqrt((centered**2).sum(axis=1).max()))
    if scale == 0.0:
        raise DegenerateCloud("all points coincide, cannot normalize")
    return centered / scale, NormalizationTransform(centroid=centroid, scale=scale)


def resample_to_count(points, count: int, rng=None) -> np.ndarray:
    """Return exactly `count` points drawn from the input.

    Fewer points than requested: the originals come first, followed by
    uniformly chosen duplicates (exact copies). More: a uniform subsample
    without replacement, original order preserved. Equal: the input as is.
    """
    pts = check_points(points)
    count = check_int(count, "count", minimum=1)
    n = pts.shape[0]
    if n == count:
        return pts
    rng = as_rng(rng)
    if n < count:
        extra = rng.integers(0, n, size=count - n)
        return np.concatenate([pts, pts[extra]], axis=0)
    keep = np.sort(rng.choice(n, size=count, replace=False))
    return pts[keep]


def _pairwise_dist(points: np.ndarray, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = points[idx] - x
    return np.sqrt((diff * diff).sum(axis=-1))


class SpatialIndex:
    """Exact k-nearest-neighbor queries over a fixed point set.

    Built on a kd-tree for the candidate search, but every returned
    distance is recomputed in float64 and candidates re-sorted by
    (distance, index), so exact ties resolve to the lower index and results
    match a brute-force scan bit for bit.
    """

    def __init__(self, points):
        self.points = check_points(points)
        self._tree = cKDTree(self.points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _candidates(self, x: np.ndarray, need: int, exclude: int | None) -> np.ndarray:
        # Over-fetch until the boundary of the returned set is strictly
        # farther than the need-th kept candidate, so no tie group is cut.
        n = self.n
        m = min(n, need + 2)
        while True:
            d, i = self._tree.query(x, k=m)
            d = np.atleast_1d(d)
            i = np.atleast_1d(i)
            if exclude is not None:
                keep = i != exclude
                di, ii = d[keep], i[keep]
            else:
                di, ii = d, i
            if m == n:
                return ii
            if di.shape[0] >= need and d[-1] > di[need - 1]:
                return ii
            m = min(n, m * 2)

    def query(self, x, k: int, exclude: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """k nearest members to point x, optionally excluding one member index.

        Returns (indices, distances) sorted by (distance, index). k is
        capped at the number of available members.
        """
        x = np.asarray(x, dtype=np.float64).reshape(3)
        k = check_int(k, "k", minimum=1)
        avail = self.n - (1 if exclude is not None else 0)
        if avail <= 0:
            raise TooFewPoints("no neighbors available")
        k_eff = min(k, avail)
        cand = self._candidates(x, k_eff, exclude)
        dist = _pairwise_dist(self.points, cand, x)
        order = np.lexsort((cand, dist))[:k_eff]
        return cand[order], dist[order]

    def query_member(self, i: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest neighbors of member i, excluding i itself."""
        i = check_int(i, "i", minimum=0)
        if i >= self.n:
            raise IndexError(f"member index {i} out of range for {self.n} points")
        return self.query(self.points[i], k, exclude=i)

    def knn_graph(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor table for every member: (indices, distances), each (N, k).

        Self-excluded by index. Raises TooFewPoints when k >= N.
        """
        k = check_int(k, "k", minimum=1)
        n = self.n
        if k >= n:
            raise TooFewPoints(f"knn_graph needs k < N, got k={k}, N={n}")
        m = min(n, k + 2)
        d, i = self._tree.query(self.points, k=m)
        d = d.reshape(n, m)
        i = i.reshape(n, m)
        rows = np.arange(n)
        self_mask = i == rows[:, None]
        # Stable argsort on the mask floats the non-self candidates to the
        # front of each row in their original (distance-sorted) order.
        order = np.argsort(self_mask, axis=1, kind="stable")
        kept_i = np.take_along_axis(i, order, axis=1)[:, : m - 1]
        kept_d = np.take_along_axis(d, order, axis=1)[:, : m - 1]
        # Rows that need the slow path: self index missing from the m
        # candidates (mass-coincident points) or an exact tie straddling
        # the k-th position, where the tree may have cut a tie group.
        bad = self_mask.sum(axis=1) != 1
        if m < n:
            bad |= d[:, -1] <= kept_d[:, k - 1]
        diff = self.points[kept_i] - self.points[:, None, :]
        cd = np.sqrt((diff * diff).sum(axis=2))
        s1 = np.argsort(kept_i, axis=1, kind="stable")
        cd1 = np.take_along_axis(cd, s1, axis=1)
        ki1 = np.take_along_axis(kept_i, s1, axis=1)
        s2 = np.argsort(cd1, axis=1, kind="stable")
        idx = np.take_along_axis(ki1, s2, axis=1)[:, :k].astype(np.int64)
        dist = np.take_along_axis(cd1, s2, axis=1)[:, :k]
        for r in np.nonzero(bad)[0]:
            idx[r], dist[r] = self.query_member(int(r), k)
        return idx, dist


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup: vertices (V, 3) float64, faces (T, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = check_points(self.vertices, name="vertices")
        f = np.asarray(self.faces, dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must have shape (T, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise ValueError("face indices out of vertex range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        cross = np.cross(b - a, c - a)
        return 0.5 * np.sqrt((cross * cross).sum(axis=1))

    @property
    def total_area(self) -> float:
        return float(self.triangle_areas.sum())

    def edge_counts(self) -> dict[tuple[int, int], int]:
        """Undirected edge -> number of incident faces."""
        counts: dict[tuple[int, int], int] = {}
        for tri in self.faces:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        """True when every undirected edge borders exactly two faces."""
        if self.faces.shape[0] == 0:
            return False
        return all(c == 2 for c in self.edge_counts().values())


def sample_mesh_surface(mesh: TriangleMesh, count: int, rng=None) -> np.ndarray:
    """Draw `count` points uniformly by area over the mesh surface.

    Triangle choice is area-weighted; the position inside each triangle uses
    the folded-barycentric trick so the density is uniform.
    """
    count = check_int(count, "count", minimum=1)
    if mesh.faces.shape[0] == 0:
        raise EmptyMesh("mesh has no faces")
    areas = mesh.triangle_areas
    total = areas.sum()
    if total <= 0.0:
        raise EmptyMesh("mesh has zero total area")
    rng = as_rng(rng)
    tri = rng.choice(areas.shape[0], size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    a = mesh.vertices[mesh.faces[tri, 0]]
    b = mesh.vertices[mesh.faces[tri, 1]]
    c = mesh.vertices[mesh.faces[tri, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)
