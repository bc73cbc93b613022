"""Tests for the shared geometric primitives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soibag.errors import (
    DegenerateRim,
    DegenerateSpread,
    DegenerateVertices,
    EmptySet,
    KTooLarge,
    NonPositiveAxis,
    TooFewPoints,
)
from soibag.geometry import (
    BottomFrame,
    Ellipse2D,
    Ellipse3D,
    OrderedSOI,
    align_cyclic,
    build_bottom_frame,
    chamfer_distance,
    ellipse_perimeter,
    ellipse_perimeter_quadrature,
    farthest_point_sampling,
    fit_rim_plane,
    from_frame,
    pca_principal_axis,
    polyline_perimeter,
    sample_ellipse3d,
    soi_distance,
    to_frame,
    validate_vertex_set,
)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


class TestBottomFrame:
    def test_unit_square_frame(self):
        V = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
        frame = build_bottom_frame(V)
        assert np.allclose(frame.origin, [0.5, 0.5, 0.0])
        assert np.allclose(np.abs(frame.a_z), [0, 0, 1], atol=1e-12)

    def test_rotated_square_normal(self):
        # oracle: exact plane normal of a square rotated 30 deg about x
        a = np.deg2rad(30.0)
        rot = np.array(
            [[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]]
        )
        V = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float) @ rot.T
        frame = build_bottom_frame(V)
        normal = rot @ np.array([0.0, 0.0, 1.0])
        assert min(
            np.linalg.norm(frame.a_z - normal), np.linalg.norm(frame.a_z + normal)
        ) < 1e-9

    def test_collinear_raises(self):
        with pytest.raises(DegenerateVertices):
            build_bottom_frame([[0, 0, 0], [1, 0, 0], [2, 0, 0]])

    def test_too_few_vertices(self):
        with pytest.raises(DegenerateVertices):
            validate_vertex_set([[0, 0, 0], [1, 0, 0]])

    def test_non_coplanar_raises(self):
        V = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.01]]
        with pytest.raises(DegenerateVertices):
            validate_vertex_set(V)

    def test_orthonormality_and_local_plane(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            rot = random_rotation(rng)
            offset = rng.normal(scale=0.5, size=3)
            base = rng.uniform(-0.1, 0.1, size=(6, 3))
            base[:, 2] = 0.0
            V = base @ rot.T + offset
            frame = build_bottom_frame(V)
            R = frame.rotation
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert np.linalg.det(R) > 0
            local = to_frame(V, frame)
            assert np.abs(local[:, 2]).max() <= 1e-9
            assert np.linalg.norm(local.mean(axis=0)) <= 1e-9

    def test_frame_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            BottomFrame(np.eye(3) * 2.0, np.zeros(3))


class TestFrameTransforms:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            frame = BottomFrame(random_rotation(rng), rng.normal(size=3))
            p = rng.normal(size=(4, 3))
            assert np.allclose(from_frame(to_frame(p, frame), frame), p, atol=1e-12)

    def test_origin_maps_to_zero(self):
        rng = np.random.default_rng(2)
        frame = BottomFrame(random_rotation(rng), rng.normal(size=3))
        assert np.allclose(to_frame(frame.origin, frame), 0.0, atol=1e-12)

    def test_explicit_matrix_oracle(self):
        # oracle: hand-composed rigid transform at a 30 deg rotation
        a = np.deg2rad(30.0)
        R = np.array(
            [[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]]
        )
        t = np.array([0.3, -0.2, 0.7])
        frame = BottomFrame(R, t)
        p = np.array([[0.1, 0.2, 0.3]])
        assert np.allclose(to_frame(p, frame), (p - t) @ R, atol=1e-14)
        assert np.allclose(from_frame(p, frame), p @ R.T + t, atol=1e-14)


class TestEllipsePerimeter:
    def test_circle(self):
        assert ellipse_perimeter(1.0, 1.0) == pytest.approx(2.0 * np.pi, rel=1e-12)

    def test_against_quadrature(self):
        # oracle: adaptive quadrature of the arc-length integral
        assert ellipse_perimeter(0.2, 0.1) == pytest.approx(0.96885, abs=1e-4)
        for aspect in np.linspace(1.0, 10.0, 19):
            exact = ellipse_perimeter_quadrature(aspect, 1.0)
            assert abs(ellipse_perimeter(aspect, 1.0) / exact - 1.0) < 1e-4

    def test_scale_covariance(self):
        base = ellipse_perimeter(0.12, 0.09)
        assert ellipse_perimeter(0.36, 0.27) == pytest.approx(3.0 * base, rel=1e-12)

    def test_symmetry(self):
        assert ellipse_perimeter(0.3, 0.1) == pytest.approx(
            ellipse_perimeter(0.1, 0.3), rel=1e-12
        )

    def test_nonpositive_axis(self):
        with pytest.raises(NonPositiveAxis):
            ellipse_perimeter(0.0, 0.1)

    @given(
        a=st.floats(min_value=0.01, max_value=10.0),
        k=st.floats(min_value=0.1, max_value=10.0),
    )
    @settings(max_examples=50)
    def test_homogeneity(self, a, k):
        b = 0.7 * a
        assert ellipse_perimeter(k * a, k * b) == pytest.approx(
            k * ellipse_perimeter(a, b), rel=1e-12
        )


class TestPolylinePerimeter:
    def test_unit_square(self):
        pts = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
        assert polyline_perimeter(pts) == pytest.approx(4.0)

    def test_regular_polygon_chord_formula(self):
        # oracle: exact chord length 2 n sin(pi / n)
        n = 64
        theta = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
        expected = 2.0 * n * np.sin(np.pi / n)
        assert polyline_perimeter(pts) == pytest.approx(expected, rel=1e-12)
        assert polyline_perimeter(pts) < 2.0 * np.pi

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            polyline_perimeter([[0, 0, 0], [1, 0, 0]])


class TestPcaAxis:
    def test_x_axis_points(self):
        pts = np.column_stack([np.linspace(-1, 1, 10), np.zeros(10)])
        assert np.allclose(pca_principal_axis(pts), [1.0, 0.0], atol=1e-12)

    def test_diagonal_line(self):
        t = np.linspace(-1, 1, 10)
        axis = pca_principal_axis(np.column_stack([t, t]))
        assert np.allclose(axis, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-12)

    def test_anisotropic_gaussian(self):
        # oracle: dominant eigenvector of the sample covariance
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(5000, 2)) * [10.0, 1.0]
        axis = pca_principal_axis(pts)
        angle = np.degrees(np.arccos(min(abs(axis[0]), 1.0)))
        assert angle < 2.0

    def test_degenerate(self):
        with pytest.raises(DegenerateSpread):
            pca_principal_axis(np.zeros((5, 2)))

    def test_sign_normalization(self):
        pts = np.column_stack([np.linspace(-1, 1, 10), np.zeros(10)])
        axis = pca_principal_axis(pts[::-1])
        assert axis[0] > 0


class TestFps:
    def test_full_set(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(20, 3))
        out = farthest_point_sampling(pts, 20)
        assert sorted(map(tuple, out)) == sorted(map(tuple, pts))

    def test_square_corners(self):
        # oracle: the 4 corners are the exhaustive max-min optimum
        side = np.linspace(0, 1, 25)
        boundary = []
        for s in side:
            boundary += [[s, 0, 0], [s, 1, 0], [0, s, 0], [1, s, 0]]
        boundary = np.unique(np.asarray(boundary), axis=0)
        out = farthest_point_sampling(boundary, 4, start_index=0)
        corners = {(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)}
        assert {tuple(p) for p in out} == corners

    def test_k_one(self):
        pts = np.arange(30, dtype=float).reshape(10, 3)
        out = farthest_point_sampling(pts, 1, start_index=3)
        assert np.allclose(out, pts[3:4])

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            farthest_point_sampling(np.zeros((3, 3)), 4)

    def test_min_gap_beats_random_subsets(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(size=(100, 3))
        fps = farthest_point_sampling(pts, 8)

        def min_gap(sub):
            d = np.linalg.norm(sub[:, None] - sub[None, :], axis=2)
            return d[np.triu_indices(len(sub), 1)].min()

        gap = min_gap(fps)
        wins = 0
        for _ in range(100):
            sub = pts[rng.choice(100, size=8, replace=False)]
            if gap >= min_gap(sub):
                wins += 1
        assert wins >= 95


class TestChamfer:
    def test_identical_sets(self):
        pts = np.random.default_rng(6).normal(size=(15, 3))
        assert chamfer_distance(pts, pts) == 0.0

    def test_single_pair(self):
        assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(2.0)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        A = rng.normal(size=(30, 3))
        B = rng.normal(size=(50, 3))

        def brute(P, Q):
            return np.mean(
                [min(np.sum((p - q) ** 2) for q in Q) for p in P]
            )

        assert chamfer_distance(A, B) == pytest.approx(brute(A, B) + brute(B, A))

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        A = rng.normal(size=(12, 3))
        B = rng.normal(size=(9, 3))
        assert chamfer_distance(A, B) == pytest.approx(chamfer_distance(B, A))

    def test_empty_raises(self):
        with pytest.raises(EmptySet):
            chamfer_distance(np.zeros((0, 3)), np.zeros((3, 3)))


class TestEllipse3d:
    def test_circle_samples(self):
        e = Ellipse3D(np.zeros(3), [1, 0, 0], [0, 1, 0], 1.0, 1.0)
        pts = sample_ellipse3d(e, 4)
        assert np.allclose(pts[0], [1, 0, 0], atol=1e-12)
        assert np.allclose(pts[1], [0, 1, 0], atol=1e-12)
        assert np.allclose(pts[2], [-1, 0, 0], atol=1e-12)
        assert np.allclose(pts[3], [0, -1, 0], atol=1e-12)

    def test_samples_satisfy_implicit_equation(self):
        rng = np.random.default_rng(9)
        rot = random_rotation(rng)
        e = Ellipse3D(rng.normal(size=3), rot[:, 0], rot[:, 1], 0.2, 0.1)
        pts = sample_ellipse3d(e, 64)
        d = pts - e.c
        val = (d @ e.u / e.rho_u) ** 2 + (d @ e.v / e.rho_v) ** 2
        assert np.abs(val - 1.0).max() < 1e-12

    def test_dense_polyline_matches_analytic(self):
        e = Ellipse3D(np.zeros(3), [1, 0, 0], [0, 1, 0], 0.12, 0.09)
        p = polyline_perimeter(sample_ellipse3d(e, 360))
        assert abs(p / ellipse_perimeter(0.12, 0.09) - 1.0) < 1e-3

    def test_axis_validation(self):
        with pytest.raises(ValueError):
            Ellipse3D(np.zeros(3), [1, 0, 0], [1, 0, 0], 0.2, 0.1)
        with pytest.raises(NonPositiveAxis):
            Ellipse3D(np.zeros(3), [1, 0, 0], [0, 1, 0], 0.1, 0.2)


class TestEllipse2d:
    def test_alpha_normalized(self):
        e = Ellipse2D(0.0, 0.0, 0.2, 0.1, np.pi + 0.3)
        assert 0.0 <= e.alpha < np.pi
        assert e.alpha == pytest.approx(0.3)

    def test_sample_on_boundary(self):
        e = Ellipse2D(0.05, -0.02, 0.2, 0.1, 0.7)
        xy = e.sample(32)
        from soibag.generation import implicit_ellipse_value

        vals = implicit_ellipse_value(e, xy[:, 0], xy[:, 1])
        assert np.abs(vals - 1.0).max() < 1e-9


class TestAlignCyclic:
    def test_recovers_shift(self):
        rng = np.random.default_rng(10)
        theta = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        ref = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(16)])
        shifted = np.roll(ref, 5, axis=0)
        assert np.allclose(align_cyclic(shifted, ref), ref)

    def test_recovers_reversal(self):
        theta = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        ref = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(16)])
        assert np.allclose(align_cyclic(ref[::-1], ref), ref)

    def test_soi_distance_zero_on_shift(self):
        theta = np.linspace(0, 2 * np.pi, 12, endpoint=False)
        ref = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(12)])
        assert soi_distance(np.roll(ref, 3, axis=0), ref) < 1e-12


class TestOrderedSOI:
    def test_vector_round_trip(self):
        pts = np.random.default_rng(11).normal(size=(8, 3))
        soi = OrderedSOI(pts, timestamp=4)
        back = OrderedSOI.from_vector(soi.as_vector(), timestamp=4)
        assert np.allclose(back.points, pts)
        assert back.timestamp == 4

    def test_rejects_nonfinite(self):
        pts = np.zeros((4, 3))
        pts[1, 2] = np.nan
        with pytest.raises(ValueError):
            OrderedSOI(pts)


class TestFitRimPlane:
    def test_plane_recovery(self):
        rng = np.random.default_rng(12)
        rot = random_rotation(rng)
        theta = np.linspace(0, 2 * np.pi, 20, endpoint=False)
        flat = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(20)])
        pts = flat @ rot.T + [1, 2, 3]
        centroid, normal = fit_rim_plane(pts)
        assert np.allclose(centroid, [1, 2, 3], atol=1e-12)
        true_n = rot[:, 2]
        assert min(np.linalg.norm(normal - true_n), np.linalg.norm(normal + true_n)) < 1e-9

    def test_collinear_raises(self):
        pts = np.column_stack([np.linspace(0, 1, 5), np.zeros(5), np.zeros(5)])
        with pytest.raises(DegenerateRim):
            fit_rim_plane(pts)
