"""Normalization, resampling, exact kNN, and mesh surface sampling."""

import numpy as np
import pytest
from scipy.stats import chisquare

from oracles import knn_brute
from pcrestore.errors import DegenerateCloud, EmptyMesh, TooFewPoints
from pcrestore.geometry import (
    SpatialIndex,
    TriangleMesh,
    normalize_unit_sphere,
    resample_to_count,
    sample_mesh_surface,
)


def test_normalize_already_normalized():
    """A symmetric pair on the unit sphere maps to itself."""
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    out, tr = normalize_unit_sphere(pts)
    np.testing.assert_array_equal(out, pts)
    np.testing.assert_array_equal(tr.centroid, [0, 0, 0])
    assert tr.scale == 1.0


def test_normalize_hand_computed():
    pts = np.array([[2.0, 2, 2], [4.0, 2, 2]])
    out, tr = normalize_unit_sphere(pts)
    np.testing.assert_allclose(out, [[-1, 0, 0], [1, 0, 0]], atol=1e-15)
    np.testing.assert_allclose(tr.centroid, [3, 2, 2])
    assert tr.scale == pytest.approx(1.0)


def test_normalize_random_box_max_norm_one():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-5, 5, size=(1024, 3))
    out, _ = normalize_unit_sphere(pts)
    assert np.linalg.norm(out, axis=1).max() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)


def test_normalize_round_trip_identity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pts = rng.normal(scale=3.0, size=(64, 3)) + rng.uniform(-10, 10, 3)
        out, tr = normalize_unit_sphere(pts)
        back = tr.invert(out)
        np.testing.assert_allclose(back, pts, atol=1e-12)


def test_normalize_degenerate():
    with pytest.raises(DegenerateCloud):
        normalize_unit_sphere(np.ones((5, 3)))


def test_resample_equal_count_identity():
    rng = np.random.default_rng(3)
    pts = rng.random((100, 3))
    np.testing.assert_array_equal(resample_to_count(pts, 100, rng), pts)


def test_resample_upsample_keeps_originals_first():
    pts = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    out = resample_to_count(pts, 5, np.random.default_rng(4))
    assert out.shape == (5, 3)
    np.testing.assert_array_equal(out[:2], pts)
    for row in out[2:]:
        assert any(np.array_equal(row, p) for p in pts)


def test_resample_downsample_uniform_no_replacement():
    rng = np.random.default_rng(5)
    pts = rng.random((2048, 3))
    out = resample_to_count(pts, 1024, np.random.default_rng(9))
    assert out.shape == (1024, 3)
    # without replacement: every output row is a distinct input row
    seen = {tuple(r) for r in out}
    assert len(seen) == 1024
    pool = {tuple(r) for r in pts}
    assert seen <= pool


def test_resample_deterministic():
    rng = np.random.default_rng(6)
    pts = rng.random((2048, 3))
    a = resample_to_count(pts, 1024, np.random.default_rng(7))
    b = resample_to_count(pts, 1024, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_knn_query_collinear_hand_case():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    idx = SpatialIndex(pts)
    i, d = idx.query(pts[0], 1, exclude=0)
    assert list(i) == [1]
    assert d[0] == pytest.approx(1.0)


def test_knn_query_single_point_no_neighbors():
    idx = SpatialIndex(np.zeros((1, 3)))
    with pytest.raises(TooFewPoints):
        idx.query_member(0, 1)


def test_knn_query_matches_brute_force_randomized():
    """Index sets and distances equal the brute oracle, including k > N."""
    rng = np.random.default_rng(8)
    for trial in range(60):
        n = int(rng.integers(2, 65))
        pts = rng.random((n, 3))
        idx = SpatialIndex(pts)
        k = int(rng.integers(1, 12))
        member = int(rng.integers(0, n))
        got_i, got_d = idx.query_member(member, k)
        want = knn_brute(pts, pts[member], k, exclude_index=member)
        assert list(got_i) == [w[0] for w in want]
        # math.dist and sqrt-of-sum can differ in the last ulp
        np.testing.assert_allclose(got_d, [w[1] for w in want], rtol=0, atol=1e-12)
        # free query point, no exclusion
        q = rng.random(3)
        got_i, got_d = idx.query(q, k)
        want = knn_brute(pts, q, k)
        assert list(got_i) == [w[0] for w in want]


def test_knn_exact_ties_resolve_to_lower_index():
    """Lattice clouds produce exact distance ties; order must be by index."""
    rng = np.random.default_rng(9)
    for _ in range(40):
        n = int(rng.integers(6, 30))
        pts = rng.integers(0, 3, size=(n, 3)).astype(float)  # many duplicates
        idx = SpatialIndex(pts)
        k = int(rng.integers(1, 8))
        for member in range(n):
            got_i, _ = idx.query_member(member, k)
            want = knn_brute(pts, pts[member], k, exclude_index=member)
            assert list(got_i) == [w[0] for w in want]


def test_knn_graph_matches_per_member_queries():
    rng = np.random.default_rng(10)
    for _ in range(25):
        n = int(rng.integers(8, 120))
        # mix smooth and quantized clouds so tie handling is exercised
        if rng.random() < 0.5:
            pts = rng.random((n, 3))
        else:
            pts = rng.integers(0, 4, size=(n, 3)).astype(float) * 0.25
        idx = SpatialIndex(pts)
        k = int(rng.integers(1, min(8, n)))
        gi, gd = idx.knn_graph(k)
        assert gi.shape == (n, k)
        for m in range(n):
            wi, wd = idx.query_member(m, k)
            assert list(gi[m]) == list(wi)
            np.testing.assert_array_equal(gd[m], wd)


def test_knn_graph_coincident_cluster():
    """Many coincident points: duplicates are each other's neighbors."""
    pts = np.zeros((6, 3))
    pts[5] = [1.0, 0, 0]
    gi, gd = SpatialIndex(pts).knn_graph(3)
    for m in range(5):
        assert gd[m, 0] == 0.0
        assert m not in gi[m]
    assert gi.shape == (6, 3)


def test_knn_graph_rejects_k_too_large():
    with pytest.raises(TooFewPoints):
        SpatialIndex(np.random.default_rng(0).random((4, 3))).knn_graph(4)


def test_triangle_mesh_validation_and_area():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2]]))
    assert mesh.total_area == pytest.approx(0.5)
    with pytest.raises(ValueError):
        TriangleMesh(verts, np.array([[0, 1, 3]]))


def test_tetrahedron_is_watertight():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    mesh = TriangleMesh(verts, faces)
    assert mesh.is_watertight()
    open_mesh = TriangleMesh(verts, faces[:3])
    assert not open_mesh.is_watertight()


def test_sample_surface_barycentric_containment():
    """Samples of one triangle stay on its plane inside the triangle."""
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    mesh = TriangleMesh(verts, np.array([[0, 1, 2]]))
    pts = sample_mesh_surface(mesh, 1000, np.random.default_rng(11))
    assert np.all(pts[:, 2] == 0.0)
    u = pts[:, 0]
    v = pts[:, 1]
    assert np.all(u >= 0) and np.all(v >= 0) and np.all(u + v <= 1.0 + 1e-12)


def test_sample_surface_area_weighted():
    """Two triangles with area ratio 1:3 split 40k samples near 10k/30k."""
    verts = np.array(
        [
            [0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0],          # area 1/2
            [5.0, 0, 0], [8.0, 0, 0], [5.0, 1, 0],          # area 3/2
        ]
    )
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
    pts = sample_mesh_surface(mesh, 40000, np.random.default_rng(12))
    n_small = int((pts[:, 0] < 2.5).sum())
    sigma = np.sqrt(40000 * 0.25 * 0.75)
    assert abs(n_small - 10000) <= 3 * sigma


def test_sample_surface_chi_square_many_triangles():
    """Pick counts across disjoint triangles match area proportions."""
    verts = []
    faces = []
    for t in range(12):
        x0 = 2.0 * t
        h = 0.5 + 0.25 * t
        verts.extend([[x0, 0.0, 0.0], [x0 + 1.0, 0.0, 0.0], [x0, h, 0.0]])
        faces.append([3 * t, 3 * t + 1, 3 * t + 2])
    mesh = TriangleMesh(np.array(verts), np.array(faces))
    pts = sample_mesh_surface(mesh, 100_000, np.random.default_rng(13))
    band = (pts[:, 0] // 2.0).astype(int)  # triangle t owns x in [2t, 2t+1]
    counts = np.bincount(band, minlength=12)
    areas = mesh.triangle_areas
    expected = areas / areas.sum() * 100_000
    _, p = chisquare(counts, expected)
    assert p > 0.001


def test_sample_surface_empty_mesh():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    degenerate = TriangleMesh(verts, np.array([[0, 1, 2]]))  # zero area
    with pytest.raises(EmptyMesh):
        sample_mesh_surface(degenerate, 10, np.random.default_rng(14))
    empty = TriangleMesh(verts, np.zeros((0, 3), dtype=int))
    with pytest.raises(EmptyMesh):
        sample_mesh_surface(empty, 10, np.random.default_rng(15))
