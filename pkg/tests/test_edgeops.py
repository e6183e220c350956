import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgeguard.arraycore import make_rng
from edgeguard.edgeops import (
    EdgeField,
    binarize_edges,
    depth_edges,
    forward_diff,
    forward_diff_adjoint,
    rgb_edges,
    segprob_edges,
    seglabel_edges,
)


def brute_label_edges(m):
    h, w = m.shape
    out = np.zeros((2, h, w))
    for i in range(h):
        for j in range(w):
            if i + 1 < h and m[i + 1, j] != m[i, j]:
                out[0, i, j] = 1
            if j + 1 < w and m[i, j + 1] != m[i, j]:
                out[1, i, j] = 1
    return out


images = arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 8), st.just(3)), elements=st.floats(0, 1))


class TestRgbEdges:
    def test_constant_image_is_zero(self):
        e = rgb_edges(np.full((5, 6, 3), 0.3))
        assert not e.planes.any()

    def test_two_by_two_single_channel(self):
        e = rgb_edges(np.array([[0.0, 1.0], [0.0, 1.0]])[..., None])
        np.testing.assert_array_equal(e.plane_w, [[1, 0], [1, 0]])
        np.testing.assert_array_equal(e.plane_h, np.zeros((2, 2)))

    def test_channel_mean_hand_value(self):
        x = np.array([[[0.0, 0.0, 0.0], [0.3, 0.6, 0.9]]])
        assert rgb_edges(x).plane_w[0, 0] == pytest.approx(0.6, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(images)
    def test_nonnegative_with_zero_trailing_border(self, x):
        e = rgb_edges(x)
        assert e.planes.min() >= 0
        assert not e.plane_h[-1].any() and not e.plane_w[:, -1].any()

    @settings(max_examples=50, deadline=None)
    @given(images, st.floats(-0.5, 0.5))
    def test_offset_invariance(self, x, c):
        shifted = x + c
        np.testing.assert_allclose(rgb_edges(shifted).planes, rgb_edges(x).planes, atol=1e-12)


class TestSegProbEdges:
    def test_constant_probs(self):
        p = np.broadcast_to([0.2, 0.3, 0.5], (4, 4, 3))
        assert not segprob_edges(p).planes.any()

    def test_two_pixel_two_class(self):
        p = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        assert segprob_edges(p).plane_w[0, 0] == 1.0

    def test_one_hot_equals_scaled_label_edges(self):
        rng = make_rng(3)
        for _ in range(20):
            s = int(rng.integers(2, 7))
            m = rng.integers(1, s + 1, (9, 11))
            one_hot = np.eye(s)[m - 1]
            np.testing.assert_allclose(segprob_edges(one_hot).planes, 2 / s * brute_label_edges(m), atol=1e-15)


class TestDepthEdges:
    def test_constant_depth(self):
        assert not depth_edges(np.full((4, 4), 7.0)).planes.any()

    def test_hand_value(self):
        e = depth_edges(np.array([[1.0, 2.0]]))
        # eta~ is held in single precision
        assert e.plane_w[0, 0] == pytest.approx(2 / 3, rel=1e-7)

    @pytest.mark.parametrize("c", [0.5, 3.0, 10.0])
    def test_scale_invariance_exact(self, c):
        d = make_rng(0).uniform(1, 10, (16, 16))
        np.testing.assert_array_equal(depth_edges(c * d).planes, depth_edges(d).planes)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(2, 8)), elements=st.floats(0.1, 100)), st.sampled_from([0.25, 2.0, 4.0]))
    def test_scale_invariance_property(self, d, c):
        # powers of two scale exactly in binary floating point
        np.testing.assert_array_equal(depth_edges(c * d).planes, depth_edges(d).planes)


class TestLabelEdges:
    def test_uniform_map(self):
        assert not seglabel_edges(np.full((4, 4), 2)).planes.any()

    def test_two_pixels(self):
        e = seglabel_edges(np.array([[3, 7]]))
        assert e.binary and e.plane_w[0, 0] == 1

    def test_vertical_two_region(self):
        m = np.ones((5, 6), dtype=int)
        m[:, 3:] = 2
        e = seglabel_edges(m)
        expected = np.zeros((5, 6))
        expected[:, 2] = 1
        np.testing.assert_array_equal(e.plane_w, expected)
        assert not e.plane_h.any()

    def test_matches_brute_force_on_random_maps(self):
        rng = make_rng(11)
        for _ in range(100):
            h, w = rng.integers(1, 12, size=2)
            m = rng.integers(1, int(rng.integers(2, 6)) + 1, (h, w))
            np.testing.assert_array_equal(seglabel_edges(m).planes, brute_label_edges(m))

    def test_batched(self):
        m = make_rng(2).integers(1, 4, (3, 6, 6))
        e = seglabel_edges(m)
        for k in range(3):
            np.testing.assert_array_equal(e.planes[k], brute_label_edges(m[k]))


class TestBinarize:
    def test_exactly_top_five_percent(self):
        plane = make_rng(0).permutation(100).reshape(10, 10).astype(float)
        e = binarize_edges(EdgeField(np.stack([plane, plane])), 0.05)
        assert e.binary
        assert e.planes[0].sum() == 5
        assert set(plane[e.planes[0] == 1]) == {95, 96, 97, 98, 99}

    def test_all_zero_plane(self):
        assert not binarize_edges(EdgeField(np.zeros((2, 4, 4)))).planes.any()

    def test_random_plane_count(self):
        rng = make_rng(9)
        for _ in range(50):
            h, w = rng.integers(8, 40, size=2)
            plane = rng.random((2, h, w))
            ones = binarize_edges(EdgeField(plane)).planes.sum(axis=(-2, -1))
            assert np.all(np.abs(ones - 0.05 * h * w) <= 1)

    def test_rejects_binary_input(self):
        with pytest.raises(ValueError):
            binarize_edges(seglabel_edges(np.ones((3, 3), dtype=int)))


def test_forward_diff_adjoint_identity():
    rng = make_rng(4)
    for axis in (-1, -2):
        a, g = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
        assert np.sum(forward_diff(a, axis) * g) == pytest.approx(np.sum(a * forward_diff_adjoint(g, axis)), rel=1e-12)


def test_edgefield_validates_layout():
    with pytest.raises(ValueError):
        EdgeField(np.zeros((3, 4, 4)))
