import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeguard.arraycore import make_rng
from edgeguard.detector import (
    CalibrationError,
    DetectorConfig,
    ThresholdSet,
    calibrate,
    decide,
    detect,
    detect_batch,
    read_thresholds,
    score,
    score_batch,
    thresholds_for_gamma,
    vote,
    write_thresholds,
)

THETA = ThresholdSet((0.4, 0.3, 0.5), 0.05, 100, 0.05)


def _aligned_scene():
    x = np.zeros((16, 16, 3))
    x[:, 8:] = 1.0
    labels = np.where(x[..., 0] > 0, 2, 1)
    depth = np.where(x[..., 0] > 0, 1.0, 3.0)
    return x, depth, labels


class TestScore:
    def test_aligned_triple_is_one(self):
        x, depth, labels = _aligned_scene()
        t = score(x, depth, labels)
        assert t.ssim_mx == pytest.approx(1.0, abs=1e-9)
        assert t.ssim_xd == pytest.approx(1.0, abs=1e-9)
        assert t.ssim_md == pytest.approx(1.0, abs=1e-9)

    def test_mae_identical_is_zero(self):
        x, depth, labels = _aligned_scene()
        # eta~ is 0.5 and 1.5 on the two sides, so every edge field is one column of ones
        t = score(x, depth, labels, DetectorConfig(metric="mae"))
        assert t.as_array().tolist() == [0.0, 0.0, 0.0]

    def test_binary_mode_runs(self):
        rng = make_rng(0)
        s = score_batch(rng.random((2, 16, 16, 3)), rng.uniform(1, 5, (2, 16, 16)), rng.integers(1, 4, (2, 16, 16)), DetectorConfig(edge_mode="binary"))
        assert s.shape == (2, 3) and np.all(np.abs(s) <= 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score(np.zeros((8, 8, 3)), np.ones((8, 9)), np.ones((8, 8), dtype=int))


class TestVoting:
    def test_example_no_detection(self):
        votes, decision = detect_batch(np.array([0.5, 0.2, 0.6]), THETA)
        assert tuple(votes) == (0, 1, 0) and decision == 0

    def test_example_detection(self):
        votes, decision = detect_batch(np.array([0.3, 0.2, 0.6]), THETA)
        assert tuple(votes) == (1, 1, 0) and decision == 1

    def test_redundancy(self):
        for j in range(3):
            v = np.ones(3, dtype=int)
            v[j] = 0
            assert decide(v) == 1

    def test_exhaustive_vote_table(self):
        for combo in itertools.product((0, 1), repeat=3):
            assert decide(np.array(combo)) == int(sum(combo) >= 2)
            for j, pair in enumerate(("mx", "xd", "md")):
                assert decide(np.array(combo), pair) == combo[j]

    def test_strict_less_than(self):
        assert tuple(vote(np.array([0.4, 0.3, 0.5]), THETA.as_array())) == (0, 0, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0, 1))
    def test_monotone_in_theta(self, s, theta, bump):
        s, theta = np.array(s), np.array(theta)
        assert np.all(vote(s, theta + bump) >= vote(s, theta))

    def test_detect_wrapper(self):
        x, depth, labels = _aligned_scene()
        res = detect(x, depth, labels, THETA)
        assert res.decision == 0 and res.votes == (0, 0, 0)


class TestCalibration:
    def test_order_statistic_example(self):
        s = np.tile(0.01 * np.arange(1, 101)[:, None], (1, 3))
        theta = thresholds_for_gamma(s, 0.05)
        assert theta[0] == pytest.approx(0.06)
        assert vote(s, theta)[:, 0].sum() == 5

    def test_single_mode_hits_target(self):
        s = np.tile(0.01 * np.arange(1, 101)[:, None], (1, 3))
        ts = calibrate(s, DetectorConfig(vote_mode="mx"))
        assert ts.theta[0] == pytest.approx(0.06) and ts.achieved_fpr == 0.05

    def test_gamma_zero_never_flags_clean(self):
        s = make_rng(1).random((50, 3))
        theta = thresholds_for_gamma(s, 0.0)
        assert np.array_equal(theta, s.min(axis=0))
        assert vote(s, theta).sum() == 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(20, 400), st.integers(0, 2**31), st.sampled_from([0.01, 0.05, 0.1, 0.2]))
    def test_contract(self, n, seed, target):
        rng = make_rng(seed)
        base = rng.random((n, 1))
        s = 0.6 * base + 0.4 * rng.random((n, 3))  # correlated pairs
        ts = calibrate(s, DetectorConfig(target_fpr=target))
        achieved = decide(vote(s, ts.as_array())).mean()
        assert achieved == ts.achieved_fpr
        assert achieved <= target
        assert target - achieved <= 1 / n + 0.01

    def test_too_few(self):
        with pytest.raises(CalibrationError):
            calibrate(make_rng(0).random((19, 3)))

    def test_degenerate(self):
        s = make_rng(0).random((30, 3))
        s[:, 1] = 0.5
        with pytest.raises(CalibrationError):
            calibrate(s)
        # a single-pair detector only needs its own pair to vary
        calibrate(s, DetectorConfig(vote_mode="mx"))

    def test_threshold_file_round_trip(self, tmp_path):
        ts = calibrate(make_rng(3).random((100, 3)), DetectorConfig(metric="mae", vote_mode="xd", target_fpr=0.1))
        write_thresholds(ts, tmp_path / "t.txt")
        back = read_thresholds(tmp_path / "t.txt")
        assert back == ts

    def test_bad_threshold_file(self, tmp_path):
        (tmp_path / "t.txt").write_text("mx 0.1 0.05 100 0.05\n")
        with pytest.raises(ValueError):
            read_thresholds(tmp_path / "t.txt")


def test_invalid_config():
    with pytest.raises(ValueError):
        DetectorConfig(metric="l2")
    with pytest.raises(ValueError):
        DetectorConfig(vote_mode="any")


def test_clean_scores_exceed_attacked(pipeline):
    clean = pipeline.report.clean_scores.mean(axis=0)
    attacked = pipeline.report.cell_scores[("fgsm", pipeline.attack_mode, 16)].mean(axis=0)
    assert np.all(attacked < clean)
