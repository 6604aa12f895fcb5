import math

import numpy as np
import pytest

from conftest import random_box
from denfi.geom import RotatedBox, contains_point, rotated_iou, shrink_box
from denfi.targets import (DEFAULT_SIGMAS, IGNORE, AssignConfig, GridSpec, OrientationEncoding, assign_pixels,
                           build_target_maps, decode_exp, decode_orientation, decode_proposal,
                           decode_proposal_backward, encode_boundary_vector, encode_log, encode_orientation,
                           proposal_to_box, proposals_to_boxes, targets_to_regression)


def brute_force_assign(boxes, grid, cfg):
    """Per-pixel loop: smallest positive box wins, ties to the lowest index."""
    out = np.zeros((grid.height, grid.width), dtype=np.int64)
    for i in range(grid.height):
        for j in range(grid.width):
            p = grid.pixel_center(i, j)
            best = None
            for k, (box, cid) in enumerate(boxes):
                if contains_point(shrink_box(box, cfg.sigma1), p):
                    if best is None or box.area < boxes[best][0].area:
                        best = k
            if best is not None:
                out[i, j] = boxes[best][1]
            elif any(contains_point(shrink_box(b, cfg.sigma2), p) for b, _ in boxes):
                out[i, j] = IGNORE
    return out


def random_scene(rng, grid, classes=3, count=None):
    count = rng.integers(0, 6) if count is None else count
    boxes = []
    for _ in range(count):
        x = rng.uniform(grid.origin_x, grid.origin_x + grid.width * grid.cell)
        y = rng.uniform(grid.origin_y, grid.origin_y + grid.height * grid.cell)
        boxes.append((RotatedBox(x, y, rng.uniform(1, 4), rng.uniform(2, 8), rng.uniform(-math.pi, math.pi)),
                      int(rng.integers(1, classes + 1))))
    return boxes


class TestAssignment:
    def test_matches_brute_force(self, rng):
        grid = GridSpec(20, 24, -3.0, 1.0, 0.5)
        for category in ("Car", "Pedestrian"):
            cfg = AssignConfig.for_category(category, num_classes=3)
            for _ in range(10):
                boxes = random_scene(rng, grid)
                assert np.array_equal(assign_pixels(boxes, grid, cfg), brute_force_assign(boxes, grid, cfg))

    def test_category_sigmas(self):
        assert DEFAULT_SIGMAS["Car"] == (0.3, 0.5)
        assert DEFAULT_SIGMAS["Cyclist"] == (0.3, 0.5)
        assert DEFAULT_SIGMAS["Pedestrian"] == (0.5, 0.8)

    def test_invalid_sigmas(self):
        with pytest.raises(ValueError):
            AssignConfig(0.6, 0.5)
        with pytest.raises(ValueError):
            AssignConfig(0.3, 1.5)

    def test_three_way_partition(self):
        grid = GridSpec(10, 10, 0.0, 0.0, 1.0)
        cls = assign_pixels([(RotatedBox(5, 5, 6, 6), 1)], grid, AssignConfig(0.3, 0.5, 1))
        # sigma1 square is 1.8 m wide around (5, 5): centers 4.5 and 5.5 on each axis
        assert np.count_nonzero(cls == 1) == 4
        # sigma2 square 3 m wide covers centers 3.5..6.5, minus the positives
        assert np.count_nonzero(cls == IGNORE) == 16 - 4
        assert np.count_nonzero(cls == 0) == 100 - 16

    def test_smaller_box_wins(self):
        grid = GridSpec(8, 8, 0.0, 0.0, 1.0)
        big = (RotatedBox(4, 4, 8, 8), 1)
        small = (RotatedBox(4, 4, 4, 4), 2)
        cfg = AssignConfig(0.5, 0.8, 2)
        assert assign_pixels([big, small], grid, cfg)[3, 3] == 2
        assert assign_pixels([small, big], grid, cfg)[3, 3] == 2

    def test_bad_class_id(self):
        with pytest.raises(ValueError):
            assign_pixels([(RotatedBox(0, 0, 1, 1), 3)], GridSpec(2, 2), AssignConfig(num_classes=2))

    def test_empty_scene(self):
        assert not assign_pixels([], GridSpec(3, 4), AssignConfig()).any()


class TestBoundaryVector:
    def test_example(self):
        box = RotatedBox(0, 0, 2, 4, 0)
        b = encode_boundary_vector((0.5, 0.25), box)
        assert b.as_tuple() == pytest.approx((2.5, 0.75, 1.5, 1.25))

    def test_sums_give_size(self, rng):
        for _ in range(100):
            box = random_box(rng)
            u, v = rng.uniform(-0.49, 0.49) * box.l, rng.uniform(-0.49, 0.49) * box.w
            c, s = math.cos(box.theta), math.sin(box.theta)
            b = encode_boundary_vector((box.x + u * c - v * s, box.y + u * s + v * c), box)
            assert b.left + b.right == pytest.approx(box.l)
            assert b.top + b.bottom == pytest.approx(box.w)

    def test_outside_raises(self):
        with pytest.raises(ValueError):
            encode_boundary_vector((5.0, 0.0), RotatedBox(0, 0, 2, 4))

    def test_log_helpers(self):
        b = encode_boundary_vector((0.0, 0.0), RotatedBox(0, 0, 2, 4))
        assert decode_exp(encode_log(b)).as_tuple() == pytest.approx(b.as_tuple())
        with pytest.raises(ValueError):
            decode_exp(b)


class TestOrientation:
    def test_round_trip(self, rng):
        for n in (2, 4, 12, 36):
            for theta in rng.uniform(-math.pi, math.pi, 500):
                enc = encode_orientation(theta, n)
                assert 0 <= enc.bin < n and -1.0 <= enc.residual < 1.0
                diff = decode_orientation(enc) - theta
                assert abs(math.remainder(diff, 2 * math.pi)) < 1e-9

    def test_bin_centers(self):
        enc = encode_orientation(math.pi / 2, 12)
        assert enc.bin == 3 and enc.residual == pytest.approx(0.0, abs=1e-12)
        assert encode_orientation(math.pi, 12).bin == 6

    def test_edges(self):
        n = 12
        half = math.pi / n
        assert encode_orientation(half, n).bin == 1
        # the lower edge is shared by two bins; either encoding must decode back
        enc = encode_orientation(-half, n)
        assert enc.bin in (0, n - 1)
        assert decode_orientation(enc) == pytest.approx(-half, abs=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            encode_orientation(0.0, 1)
        with pytest.raises(ValueError):
            decode_orientation(OrientationEncoding(12, 0.0, 12))


class TestDecode:
    def test_proposal_to_box_recovers_box(self, rng):
        grid = GridSpec(30, 30, -7.5, -7.5, 0.5)
        for _ in range(40):
            box = RotatedBox(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1.5, 3), rng.uniform(3, 6),
                             rng.uniform(-math.pi, math.pi))
            t = build_target_maps([(box, 1)], grid, AssignConfig(0.5, 0.8), 12)
            prop = decode_proposal(targets_to_regression(t), 1.0, 12)
            for _, got in proposals_to_boxes(prop, grid, t.positive):
                assert (got.x, got.y, got.w, got.l) == pytest.approx((box.x, box.y, box.w, box.l), abs=1e-9)
                assert rotated_iou(got, box) == pytest.approx(1.0, abs=1e-9)

    def test_shape_and_scale_checks(self):
        with pytest.raises(ValueError):
            decode_proposal(np.zeros((2, 2, 5)), 1.0, 12)
        with pytest.raises(ValueError):
            decode_proposal(np.zeros((2, 2, 28)), 0.0, 12)

    def test_non_positive_distance(self):
        with pytest.raises(ValueError):
            proposal_to_box((0.0, 1, 1, 1, 0), (0, 0))

    def test_backward_matches_differences(self, rng):
        n = 4
        reg = rng.normal(size=(2, 3, 4 + 2 * n))
        g = rng.normal(size=(2, 3, 5))
        scale = 0.8
        # keep theta away from the +-pi wrap so the map is smooth
        reg[..., 4 + n:] *= 0.1
        f = lambda r, s: float(np.sum(decode_proposal(r, s, n)[..., :4] * g[..., :4]))  # noqa: E731
        g4 = g.copy()
        g4[..., 4] = 0.0
        grad_reg, grad_s = decode_proposal_backward(reg, scale, n, g4)
        h = 1e-6
        num = np.zeros_like(reg)
        for idx in np.ndindex(reg.shape):
            rp, rm = reg.copy(), reg.copy()
            rp[idx] += h
            rm[idx] -= h
            num[idx] = (f(rp, scale) - f(rm, scale)) / (2 * h)
        np.testing.assert_allclose(grad_reg, num, rtol=1e-6, atol=1e-8)
        assert grad_s == pytest.approx((f(reg, scale + h) - f(reg, scale - h)) / (2 * h), rel=1e-6)


def test_target_maps_layout():
    grid = GridSpec(16, 16, 0.0, 0.0, 1.0)
    box = RotatedBox(8.5, 8.5, 2.0, 4.0, 0.3)
    t = build_target_maps([(box, 1)], grid, AssignConfig(0.3, 0.5, 1), 12)
    assert t.n_pos == 1 and t.class_target[8, 8] == 1
    assert t.log_boundary[8, 8] == pytest.approx(np.log([2.0, 1.0, 2.0, 1.0]))
    assert t.bin[8, 8] == encode_orientation(0.3).bin
    assert t.box_index[8, 8] == 0 and t.bin[0, 0] == -1
