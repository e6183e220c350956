"""Shared fixtures: one seeded end-to-end run reused by the slower tests.

The run trains the toy network on 200 synthetic scenes, calibrates the
detector on 500 clean validation scenes and sweeps every perturbation kind
and strength over 200 test scenes. It takes roughly a quarter of an hour on
one CPU core, so it is built at most once per session.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from edgeguard.arraycore import make_rng
from edgeguard.detector import DetectorConfig, ThresholdSet, calibrate, score_batch
from edgeguard.evalharness.sweep import SweepConfig, SweepReport, run_sweep
from edgeguard.synthscenes import SceneSpec, generate_split, stack_split
from edgeguard.toymodel import ToyNetParams, TrainConfig, init_params, predict, train

SEED = 0
N_TRAIN, N_VAL, N_TEST = 200, 500, 200
TRAIN_CFG = TrainConfig(seed=SEED)
SCENE = SceneSpec(seed=SEED)


@dataclass
class Split:
    images: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    seeds: np.ndarray

    @classmethod
    def make(cls, n: int, name: str) -> "Split":
        samples = generate_split(SCENE, n, name)
        images, depth, labels = stack_split(samples)
        return cls(images.astype(np.float64), depth.astype(np.float64), labels, np.array([s.seed for s in samples]))


@dataclass
class Pipeline:
    train: Split
    val: Split
    test: Split
    params: ToyNetParams
    history: list
    val_scores: np.ndarray
    thresholds: ThresholdSet
    report: SweepReport
    attack_mode: str
    timings: dict = field(default_factory=dict)

    def predict(self, split: str):
        return predict(self.params, getattr(self, split).images)


def train_model(split: Split, cfg: TrainConfig = TRAIN_CFG):
    params = init_params(SCENE.num_classes, make_rng(cfg.seed))
    return train(params, split.images, split.labels, split.depth, cfg)


def clean_scores(params: ToyNetParams, split: Split, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    depth, labels = predict(params, split.images)
    return score_batch(split.images, depth, labels, cfg)


@pytest.fixture(scope="session")
def splits():
    return Split.make(N_TRAIN, "train"), Split.make(N_VAL, "val"), Split.make(N_TEST, "test")


@pytest.fixture(scope="session")
def pipeline(splits) -> Pipeline:
    tr, va, te = splits
    timings = {}
    t0 = time.perf_counter()
    params, history = train_model(tr)
    timings["train"] = time.perf_counter() - t0
    val_scores = clean_scores(params, va)
    thresholds = calibrate(val_scores)
    cfg = SweepConfig(seed=SEED)
    t0 = time.perf_counter()
    report = run_sweep(params, thresholds, te.images, te.labels, te.depth, te.seeds, cfg)
    timings["sweep"] = time.perf_counter() - t0
    return Pipeline(tr, va, te, params, history, val_scores, thresholds, report, cfg.loss_mode, timings)


def pytest_collection_modifyitems(items):
    for item in items:
        if "pipeline" in getattr(item, "fixturenames", ()):
            item.add_marker(pytest.mark.slow)


# acceptance criteria register their verdicts here; the summary prints them
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
