import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeguard.edgeops import depth_edges, seglabel_edges
from edgeguard.synthscenes import SceneSpec, generate_sample, generate_split, split_seeds, stack_split


def test_degenerate_scene():
    smp = generate_sample(SceneSpec(num_shapes=0, texture=0.0, seed=4))
    assert np.all(smp.labels_gt.data == 1)
    d = smp.depth_gt.data
    # background ramp: constant along rows, strictly decreasing downwards
    assert np.all(d == d[:, :1])
    assert np.all(np.diff(d[:, 0]) < 0)
    img = smp.image.data
    assert np.all(img == img[:, :1])


def test_same_seed_identical():
    a, b = generate_sample(SceneSpec(seed=9)), generate_sample(SceneSpec(seed=9))
    for x, y in ((a.image, b.image), (a.depth_gt, b.depth_gt), (a.labels_gt, b.labels_gt)):
        assert x.data.tobytes() == y.data.tobytes()


def test_three_distinct_samples():
    samples = generate_split(SceneSpec(), 3)
    assert [s.seed for s in samples] == [0, 1, 2]
    blobs = {s.image.data.tobytes() for s in samples}
    assert len(blobs) == 3


def test_split_seed_ranges_disjoint():
    train, val, test = (set(split_seeds(1000, k)) for k in ("train", "val", "test"))
    assert not train & val and not train & test and not val & test


def test_split_rejects_empty():
    with pytest.raises(ValueError):
        generate_split(SceneSpec(), 0)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 10_000),
    st.integers(2, 8),
    st.integers(0, 8),
    st.floats(0.1, 10.0),
    st.floats(20.0, 100.0),
    st.booleans(),
)
def test_samples_are_valid(seed, classes, shapes, lo, hi, banded):
    spec = SceneSpec(height=16, width=20, num_classes=classes, num_shapes=shapes, depth_range=(lo, hi), seed=seed, class_depth=banded)
    smp = generate_sample(spec)
    d, lab, img = smp.depth_gt.data, smp.labels_gt.data, smp.image.data
    assert d.shape == lab.shape == img.shape[:2]
    assert 0.1 <= d.min() and d.max() <= 100.0
    assert 1 <= lab.min() and lab.max() <= classes
    assert 0.0 <= img.min() and img.max() <= 1.0
    np.testing.assert_array_equal(smp.one_hot().sum(axis=-1), 1.0)


@pytest.mark.parametrize("banded", [False, True])
def test_label_edges_are_depth_edges(banded):
    hit = total = 0
    for smp in generate_split(SceneSpec(class_depth=banded), 100):
        lab = seglabel_edges(smp.labels_gt.data).planes.any(axis=0)
        dep = depth_edges(smp.depth_gt.data).planes.any(axis=0)
        hit += int((lab & dep).sum())
        total += int(lab.sum())
        assert (lab & dep).sum() >= 0.8 * lab.sum()
    assert hit >= 0.8 * total


def test_class_balance():
    samples = generate_split(SceneSpec(), 100)
    present = np.array([[np.any(s.labels_gt.data == c) for c in range(1, 6)] for s in samples])
    assert np.all(present.mean(axis=0) >= 0.5)


def test_five_hundred_samples_fast():
    t0 = time.perf_counter()
    samples = generate_split(SceneSpec(), 500, "val")
    elapsed = time.perf_counter() - t0
    assert len(samples) == 500
    assert elapsed < 10.0


def test_stack_split_shapes():
    images, depths, labels = stack_split(generate_split(SceneSpec(height=16, width=24), 4))
    assert images.shape == (4, 16, 24, 3)
    assert depths.shape == labels.shape == (4, 16, 24)


def test_invalid_spec():
    with pytest.raises(ValueError):
        SceneSpec(depth_range=(0.01, 10.0))
    with pytest.raises(ValueError):
        SceneSpec(num_classes=1)
