"""Edge-consistency detector: scoring, threshold calibration and voting.

Pairs are ordered ``(m,x), (x,d), (m,d)``: label-map edges vs image edges,
image edges vs depth edges, label-map edges vs depth edges. A pair votes
"perturbed" when its consistency is strictly below its threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arraycore import as_array
from .edgeops import binarize_edges, depth_edges, rgb_edges, seglabel_edges
from .similarity import DETECTOR_SSIM, mae_consistency, ssim_global

PAIRS = ("mx", "xd", "md")
VOTE_MODES = ("majority",) + PAIRS
MIN_CALIBRATION = 20


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    metric: str = "ssim"  # "ssim" or "mae"
    edge_mode: str = "continuous"  # "continuous" or "binary"
    vote_mode: str = "majority"  # "majority" or a single pair name
    target_fpr: float = 0.05
    top_fraction: float = 0.05

    def __post_init__(self):
        if self.metric not in ("ssim", "mae"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.edge_mode not in ("continuous", "binary"):
            raise ValueError(f"unknown edge mode {self.edge_mode!r}")
        if self.vote_mode not in VOTE_MODES:
            raise ValueError(f"vote mode must be one of {VOTE_MODES}")
        if not 0 <= self.target_fpr <= 1:
            raise ValueError("target_fpr must lie in [0, 1]")


@dataclass(frozen=True)
class ConsistencyTriple:
    ssim_mx: float
    ssim_xd: float
    ssim_md: float

    def as_array(self) -> np.ndarray:
        return np.array([self.ssim_mx, self.ssim_xd, self.ssim_md])


@dataclass(frozen=True)
class ThresholdSet:
    theta: tuple[float, float, float]
    gamma: float
    n: int
    achieved_fpr: float
    config: DetectorConfig = DetectorConfig()

    def as_array(self) -> np.ndarray:
        return np.array(self.theta, dtype=np.float64)


@dataclass(frozen=True)
class DetectionResult:
    consistencies: ConsistencyTriple
    votes: tuple[int, int, int]
    decision: int


def score_batch(images, depths, labels, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Consistencies (N, 3) for batched images, depth outputs and label maps."""
    x, d, m = as_array(images), as_array(depths), as_array(labels)
    if x.shape[:-1] != d.shape or d.shape != m.shape:
        raise ValueError(f"shape mismatch: image {x.shape}, depth {d.shape}, labels {m.shape}")
    e_x, e_d, e_m = rgb_edges(x), depth_edges(d), seglabel_edges(m)
    if cfg.edge_mode == "binary":
        e_x = binarize_edges(e_x, cfg.top_fraction)
        e_d = binarize_edges(e_d, cfg.top_fraction)
    if cfg.metric == "ssim":
        f = lambda a, b: ssim_global(a, b, DETECTOR_SSIM)  # noqa: E731
    else:
        f = mae_consistency
    return np.stack([f(e_m, e_x), f(e_x, e_d), f(e_m, e_d)], axis=-1)


def score(image, depth, labels, cfg: DetectorConfig = DetectorConfig()) -> ConsistencyTriple:
    return ConsistencyTriple(*(float(v) for v in score_batch(image, depth, labels, cfg)))


def decide(votes: np.ndarray, vote_mode: str = "majority") -> np.ndarray:
    votes = np.asarray(votes)
    if vote_mode == "majority":
        return (votes.sum(axis=-1) >= 2).astype(np.int64)
    return votes[..., PAIRS.index(vote_mode)].astype(np.int64)


def vote(scores: np.ndarray, theta) -> np.ndarray:
    return (np.asarray(scores) < np.asarray(theta)).astype(np.int64)


def thresholds_for_gamma(clean_scores: np.ndarray, gamma: float) -> np.ndarray:
    """Per-pair (floor(gamma*N)+1)-th smallest clean score (+inf when that exceeds N)."""
    s = np.sort(np.asarray(clean_scores, dtype=np.float64), axis=0)
    k = int(np.floor(gamma * len(s)))
    if k >= len(s):
        return np.full(s.shape[1], np.inf)
    return s[k]


def _thresholds_for_ranks(sorted_scores: np.ndarray, ranks) -> np.ndarray:
    n = len(sorted_scores)
    return np.array([sorted_scores[k, j] if k < n else np.inf for j, k in enumerate(ranks)])


def calibrate(clean_scores, cfg: DetectorConfig = DetectorConfig()) -> ThresholdSet:
    """Thresholds whose clean false-positive rate is as large as possible but <= target.

    A shared rank ``k = floor(gamma*N)`` is found by bisection (the vote-mode
    FPR is non-decreasing in ``k`` because every threshold is). In majority
    mode one step of ``k`` can flag up to three more clean samples, so each
    pair's rank is then raised by single steps while the FPR stays within the
    target, which brings it within ``1/N`` of the target.
    """
    s = np.asarray([t.as_array() if isinstance(t, ConsistencyTriple) else t for t in clean_scores], dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3:
        raise CalibrationError(f"expected (N, 3) clean scores, got {s.shape}")
    n = len(s)
    if n < MIN_CALIBRATION:
        raise CalibrationError(f"need at least {MIN_CALIBRATION} clean samples, got {n}")
    used = range(3) if cfg.vote_mode == "majority" else [PAIRS.index(cfg.vote_mode)]
    for j in used:
        if np.all(s[:, j] == s[0, j]):
            raise CalibrationError(f"degenerate clean scores for pair {PAIRS[j]}")
    srt = np.sort(s, axis=0)

    def fpr(ranks):
        return decide(vote(s, _thresholds_for_ranks(srt, ranks)), cfg.vote_mode).mean()

    lo, hi = 0, n  # fpr at rank 0 is 0 by strictness
    if fpr([hi] * 3) <= cfg.target_fpr:
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fpr([mid] * 3) <= cfg.target_fpr:
            lo = mid
        else:
            hi = mid
    ranks = [lo] * 3
    if cfg.vote_mode == "majority":
        grown = True
        while grown:
            grown = False
            for j in range(3):
                trial = list(ranks)
                trial[j] += 1
                if trial[j] <= n and fpr(trial) <= cfg.target_fpr:
                    ranks, grown = trial, True
    theta = _thresholds_for_ranks(srt, ranks)
    return ThresholdSet(tuple(float(t) for t in theta), lo / n, n, float(fpr(ranks)), cfg)


def detect_batch(scores: np.ndarray, thresholds: ThresholdSet, cfg: DetectorConfig | None = None):
    """Votes (N, 3) and decisions (N,) for precomputed consistencies."""
    cfg = cfg or thresholds.config
    votes = vote(scores, thresholds.as_array())
    return votes, decide(votes, cfg.vote_mode)


def detect(image, depth, labels, thresholds: ThresholdSet, cfg: DetectorConfig | None = None) -> DetectionResult:
    cfg = cfg or thresholds.config
    triple = score(image, depth, labels, cfg)
    votes, decision = detect_batch(triple.as_array(), thresholds, cfg)
    return DetectionResult(triple, tuple(int(v) for v in votes), int(decision))


# ---------------------------------------------------------------------------
# threshold file


def write_thresholds(ts: ThresholdSet, path) -> None:
    c = ts.config
    lines = [
        f"# metric={c.metric} edge_mode={c.edge_mode} vote_mode={c.vote_mode} "
        f"target_fpr={c.target_fpr!r} top_fraction={c.top_fraction!r}",
        "# pair theta gamma n achieved_fpr",
    ]
    for pair, theta in zip(PAIRS, ts.theta):
        lines.append(f"{pair} {theta!r} {ts.gamma!r} {ts.n} {ts.achieved_fpr!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_thresholds(path) -> ThresholdSet:
    cfg_fields, theta, gamma, n, fpr = {}, {}, None, None, None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    cfg_fields[k] = float(v) if k in ("target_fpr", "top_fraction") else v
            continue
        pair, t, g, nn, f = line.split()
        if pair not in PAIRS:
            raise ValueError(f"unknown pair {pair!r} in threshold file")
        theta[pair], gamma, n, fpr = float(t), float(g), int(nn), float(f)
    if set(theta) != set(PAIRS):
        raise ValueError("threshold file must list all three pairs")
    return ThresholdSet(tuple(theta[p] for p in PAIRS), gamma, n, fpr, DetectorConfig(**cfg_fields))
