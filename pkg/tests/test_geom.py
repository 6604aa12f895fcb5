import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mc_iou, random_box
from denfi.geom import (BoundaryVector, DetectionRecord, RotatedBox, box_corners, boundary_vector_iou,
                        contains_point, contains_points, iou_matrix, normalize_angle, polygon_area, rotated_iou,
                        rotated_nms, shrink_box)


class TestNormalizeAngle:
    @pytest.mark.parametrize("theta, expected", [
        (0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
        (2 * math.pi, 0.0), (-math.pi / 2, -math.pi / 2), (7.0, 7.0 - 2 * math.pi),
    ])
    def test_values(self, theta, expected):
        assert normalize_angle(theta) == pytest.approx(expected, abs=1e-12)

    def test_range(self, rng):
        out = [normalize_angle(t) for t in rng.uniform(-100, 100, 2000)]
        assert all(-math.pi < t <= math.pi for t in out)

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_non_finite(self, bad):
        with pytest.raises(ValueError):
            normalize_angle(bad)


class TestRotatedBox:
    def test_theta_normalized(self):
        assert RotatedBox(0, 0, 1, 2, -math.pi).theta == pytest.approx(math.pi)

    @pytest.mark.parametrize("w, l", [(0, 1), (1, -1), (math.nan, 1)])
    def test_rejects_bad_size(self, w, l):
        with pytest.raises(ValueError):
            RotatedBox(0, 0, w, l)

    def test_area(self):
        assert RotatedBox(1, 2, 2, 4, 0.7).area == 8.0

    def test_detection_record_validation(self):
        box = RotatedBox(0, 0, 1, 1)
        with pytest.raises(ValueError):
            DetectionRecord(1, box, 1.5)
        with pytest.raises(ValueError):
            DetectionRecord(0, box, 0.5)


def test_corners_axis_aligned():
    c = box_corners(RotatedBox(0, 0, 2, 4, 0))
    np.testing.assert_allclose(c, [[2, 1], [-2, 1], [-2, -1], [2, -1]])
    assert polygon_area(c) == pytest.approx(8.0)


def test_corners_ccw_for_any_heading(rng):
    for _ in range(50):
        b = random_box(rng)
        assert polygon_area(box_corners(b)) == pytest.approx(b.area)


class TestContainment:
    def test_length_runs_along_heading(self):
        # heading pi/2: the 4 m length lies along y, the 2 m width along x
        box = RotatedBox(0, 0, 2, 4, math.pi / 2)
        assert contains_point(box, (0.0, 1.9))
        assert not contains_point(box, (1.9, 0.0))
        assert contains_point(box, (0.9, 0.0))

    def test_boundary_is_inside(self):
        assert contains_point(RotatedBox(0, 0, 2, 4, 0), (2.0, 1.0))

    def test_matches_winding_rule(self, rng):
        for _ in range(20):
            box = random_box(rng)
            pts = rng.uniform(-6, 6, (400, 2))
            corners = box_corners(box)
            # inside a CCW convex polygon: left of every edge
            edges = np.roll(corners, -1, axis=0) - corners
            rel = pts[:, None, :] - corners[None]
            cross = edges[None, :, 0] * rel[..., 1] - edges[None, :, 1] * rel[..., 0]
            strict = np.all(cross > 1e-9, axis=1)
            outside = np.any(cross < -1e-9, axis=1)
            got = contains_points(box, pts)
            assert np.all(got[strict]) and not np.any(got[outside])

    def test_vector_matches_scalar(self, rng):
        box = random_box(rng)
        pts = rng.uniform(-4, 4, (300, 2))
        assert list(contains_points(box, pts)) == [contains_point(box, p) for p in pts]


def test_shrink_box():
    s = shrink_box(RotatedBox(1, 2, 2, 4, 0.3), 0.5)
    assert (s.x, s.y, s.w, s.l, s.theta) == pytest.approx((1, 2, 1, 2, 0.3))
    with pytest.raises(ValueError):
        shrink_box(RotatedBox(0, 0, 1, 1), 0.0)


class TestRotatedIoU:
    def test_identity(self, backend):
        b = RotatedBox(1, 1, 1.7, 4.2, 0.4)
        assert rotated_iou(b, b, backend) == pytest.approx(1.0, abs=1e-12)

    def test_square_vs_45_square(self, backend):
        a = RotatedBox(0, 0, 2, 2, 0)
        b = RotatedBox(0, 0, 2, 2, math.pi / 4)
        # octagon area 8(sqrt2 - 1); IoU = A / (8 - A)
        assert rotated_iou(a, b, backend) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_disjoint(self, backend):
        assert rotated_iou(RotatedBox(0, 0, 1, 1), RotatedBox(5, 5, 1, 1, 0.3), backend) == 0.0

    def test_touching_edges(self, backend):
        assert rotated_iou(RotatedBox(0, 0, 2, 2), RotatedBox(2, 0, 2, 2), backend) == pytest.approx(0.0, abs=1e-12)

    def test_contained(self, backend):
        a, b = RotatedBox(0, 0, 4, 4, 0.2), RotatedBox(0.1, 0, 1, 1, 1.0)
        assert rotated_iou(a, b, backend) == pytest.approx(1 / 16)

    def test_half_turn_is_same_box(self, backend):
        a = RotatedBox(0.3, 0.2, 1.5, 3.5, 0.25)
        b = RotatedBox(0.3, 0.2, 1.5, 3.5, 0.25 + math.pi)
        assert rotated_iou(a, b, backend) == pytest.approx(1.0, abs=1e-9)

    def test_matches_monte_carlo(self, rng, backend):
        for _ in range(25):
            a, b = random_box(rng, 1.5), random_box(rng, 1.5)
            assert rotated_iou(a, b, backend) == pytest.approx(mc_iou(a, b, 400), abs=5e-3)

    def test_matrix_matches_pairwise(self, rng, backend):
        A = [random_box(rng) for _ in range(7)]
        B = [random_box(rng) for _ in range(5)]
        M = iou_matrix(A, B, backend)
        assert M.shape == (7, 5)
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                assert M[i, j] == pytest.approx(rotated_iou(a, b, "python"), abs=1e-12)

    def test_empty_matrix(self):
        assert iou_matrix([], [RotatedBox(0, 0, 1, 1)]).shape == (0, 1)


box_st = st.builds(RotatedBox, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5), st.floats(0.2, 5),
                   st.floats(-math.pi, math.pi))


@settings(max_examples=200, deadline=None)
@given(box_st, box_st)
def test_iou_properties(a, b):
    ab, ba = rotated_iou(a, b), rotated_iou(b, a)
    assert 0.0 <= ab <= 1.0 + 1e-12
    assert ab == pytest.approx(ba, abs=1e-9)
    # IoU is invariant under a shared rigid motion
    shift = lambda r: RotatedBox(r.x * 0.6 - r.y * 0.8 + 3, r.x * 0.8 + r.y * 0.6 - 1, r.w, r.l,  # noqa: E731
                                 r.theta + math.atan2(0.8, 0.6))
    assert rotated_iou(shift(a), shift(b)) == pytest.approx(ab, abs=1e-8)


class TestNMS:
    def test_suppresses_overlap_keeps_order(self):
        dets = [
            DetectionRecord(1, RotatedBox(0, 0, 2, 4), 0.6),
            DetectionRecord(1, RotatedBox(0.1, 0, 2, 4), 0.9),
            DetectionRecord(1, RotatedBox(10, 0, 2, 4), 0.5),
        ]
        assert rotated_nms(dets, 0.5) == [1, 2]

    def test_ties_break_by_index(self):
        box = RotatedBox(0, 0, 1, 1)
        dets = [DetectionRecord(1, box, 0.5), DetectionRecord(1, box, 0.5)]
        assert rotated_nms(dets, 0.5) == [0]

    def test_threshold_is_strict(self):
        a = RotatedBox(0, 0, 2, 2)
        b = RotatedBox(0, 0, 2, 2, math.pi / 4)
        iou = rotated_iou(a, b)
        dets = [DetectionRecord(1, a, 0.9), DetectionRecord(1, b, 0.8)]
        assert rotated_nms(dets, iou) == [0, 1]
        assert rotated_nms(dets, iou - 1e-6) == [0]

    def test_empty(self):
        assert rotated_nms([], 0.5) == []

    def test_kept_set_grows_with_threshold(self, rng):
        dets = [DetectionRecord(1, random_box(rng, 3), float(rng.uniform())) for _ in range(40)]
        prev = 0
        for thr in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0):
            kept = rotated_nms(dets, thr)
            assert len(kept) >= prev
            prev = len(kept)
            for i in kept:
                for j in kept:
                    if i != j:
                        assert rotated_iou(dets[i].box, dets[j].box) <= thr + 1e-12
        assert prev == len(dets)

    def test_backends_agree(self, rng):
        dets = [DetectionRecord(1, random_box(rng, 2), float(rng.uniform())) for _ in range(30)]
        assert rotated_nms(dets, 0.2, "python") == rotated_nms(dets, 0.2)


class TestBoundaryVector:
    def test_log_round_trip(self):
        b = BoundaryVector(1.0, 2.0, 0.5, 3.0)
        back = b.to_log().to_linear()
        assert back.as_tuple() == pytest.approx(b.as_tuple())
        assert b.to_log().domain == "log"

    def test_linear_must_be_positive(self):
        with pytest.raises(ValueError):
            BoundaryVector(0.0, 1.0, 1.0, 1.0)

    def test_iou(self):
        p = BoundaryVector(1, 1, 1, 1)
        assert boundary_vector_iou(p, p) == pytest.approx(1.0)
        assert boundary_vector_iou(p, BoundaryVector(2, 2, 2, 2)) == pytest.approx(0.25)
