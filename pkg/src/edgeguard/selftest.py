"""Finite-difference gradient certification and metric oracles.

Each check returns a :class:`CheckResult`; ``run_all`` collects them for the
``selftest`` subcommand and the test suite.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import product

import numpy as np

from .edgeops import EdgeField, channel_diffs, forward_diff
from .evalharness.metrics import depth_metrics, miou
from .similarity import DETECTOR_SSIM, ssim_global
from .toymodel.losses import depth_loss, ecl_loss, seg_loss
from .toymodel.network import decode_depth, forward, init_params, sigmoid, softmax
from .toymodel.objectives import LOSS_MODES, adv_gradient, total_loss_grads

FD_STEP = 1e-5
GRAD_TOL = 1e-3
NUM_CASES = 20


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float  # worst observed error (or the measured quantity)
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.value:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def fd_gradient(f, x: np.ndarray, h: float = FD_STEP, coords=None, guard=None):
    """Central differences of scalar ``f`` at ``x`` (all coordinates or a flat-index subset).

    With ``guard`` (a function returning a kink signature, e.g. ReLU masks),
    returns ``(grad, smooth)`` where ``smooth`` is False if any stencil point
    changes the signature, i.e. the difference straddles a kink.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    idx = range(flat.size) if coords is None else coords
    ref = guard(x) if guard else None
    smooth = True
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        if guard:
            smooth &= _same(ref, guard(x))
        flat[i] = old - h
        fm = f(x)
        if guard:
            smooth &= _same(ref, guard(x))
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    out = np.array(out)
    out = out.reshape(x.shape) if coords is None else out
    return (out, smooth) if guard else out


def fd_gradient_batched(f, x: np.ndarray, h: float = FD_STEP, guard=None):
    """Central differences for a batch-of-one ``x`` with every stencil point in one call.

    ``f`` maps a stack of inputs (M, ...) to M losses; ``guard`` maps the same
    stack to per-sample kink signatures. Returns ``(grad, smooth)``.
    """
    x = np.array(x, dtype=np.float64)
    if x.shape[0] != 1:
        raise ValueError("batched differences need a batch of one")
    k = x.size
    bump = h * np.eye(k).reshape((k,) + x.shape[1:])
    plus, minus = x + bump, x - bump
    grad = ((f(plus) - f(minus)) / (2 * h)).reshape(x.shape)
    if guard is None:
        return grad, True
    ref = guard(x)
    smooth = all(_same_rows(ref, guard(v)) for v in (plus, minus))
    return grad, smooth


def _same_rows(ref, sigs) -> bool:
    return all(np.array_equal(np.broadcast_to(r, s.shape), s) for r, s in zip(ref, sigs))


def _same(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def _kinks(params, x, depth_gt):
    """ReLU masks, the log-depth error signs and the signs of every edge difference."""
    act = forward(params, x)
    eta = 1.0 / act.depth
    eta = eta / eta.mean(axis=(-2, -1), keepdims=True)
    return (
        act.h1 > 0,
        act.h2 > 0,
        np.log(act.depth) > np.log(depth_gt),
        np.sign(channel_diffs(np.asarray(x, dtype=np.float64))),
        np.sign(channel_diffs(act.probs)),
        np.sign(forward_diff(eta, -2)),
        np.sign(forward_diff(eta, -1)),
    )


def _case(rng, size=8, num_classes=4):
    """Random 8x8 instance: params with nonzero biases, image, labels, depth."""
    params = init_params(num_classes, rng)
    for v in params.arrays().values():
        v += rng.normal(0, 0.05, v.shape)
    x = rng.uniform(0.05, 0.95, (1, size, size, 3))
    labels = rng.integers(1, num_classes + 1, (1, size, size))
    depth_gt = rng.uniform(1.0, 50.0, (1, size, size))
    return params, x, labels, depth_gt


def _worst(name, errors, started, redrawn=0):
    worst = max(errors)
    detail = f"cases={len(errors)} redrawn={redrawn} t={time.perf_counter() - started:.1f}s"
    return CheckResult(name, worst <= GRAD_TOL, worst, GRAD_TOL, detail)


def check_seg_grad(seed=0, cases=NUM_CASES) -> CheckResult:
    rng, t0, errs = np.random.default_rng(seed), time.perf_counter(), []
    for _ in range(cases):
        z = rng.normal(0, 2, (1, 8, 8, 4))
        lab = rng.integers(1, 5, (1, 8, 8))
        _, g = seg_loss(softmax(z), lab)
        errs.append(rel_error(g, fd_gradient(lambda v: seg_loss(softmax(v), lab)[0], z)))
    return _worst("grad J_seg (logits)", errs, t0)


def check_depth_grad(seed=1, cases=NUM_CASES) -> CheckResult:
    rng, t0, errs = np.random.default_rng(seed), time.perf_counter(), []
    for _ in range(cases):
        zs = rng.normal(0, 1.5, (1, 8, 8))
        gt = rng.uniform(0.5, 60, (1, 8, 8))
        _, g = depth_loss(decode_depth(sigmoid(zs)), gt)
        # chain through sigma so the check also covers the sigmoid derivative
        g = g * sigmoid(zs) * (1 - sigmoid(zs))
        errs.append(rel_error(g, fd_gradient(lambda v: depth_loss(decode_depth(sigmoid(v)), gt)[0], zs)))
    return _worst("grad J_depth (pre-sigmoid)", errs, t0)


def check_con_grad(seed=2, cases=NUM_CASES) -> CheckResult:
    """Consistency loss w.r.t. probabilities, sigma and the image."""
    rng, t0, errs = np.random.default_rng(seed), time.perf_counter(), []
    for _ in range(cases):
        probs = softmax(rng.normal(0, 2, (1, 8, 8, 4)))
        sig = rng.uniform(0.05, 0.95, (1, 8, 8))
        img = rng.uniform(0, 1, (1, 8, 8, 3))
        _, gp, gs, gx = ecl_loss(probs, decode_depth(sig), img)

        def tile(a, m):
            return np.repeat(a, m, axis=0)

        fp, _ = fd_gradient_batched(lambda v: ecl_loss(v, decode_depth(tile(sig, len(v))), tile(img, len(v)), per_sample=True)[0], probs)
        fs, _ = fd_gradient_batched(lambda v: ecl_loss(tile(probs, len(v)), decode_depth(v), tile(img, len(v)), per_sample=True)[0], sig)
        fx, _ = fd_gradient_batched(lambda v: ecl_loss(tile(probs, len(v)), decode_depth(tile(sig, len(v))), v, per_sample=True)[0], img)
        errs.append(max(rel_error(gp, fp), rel_error(gs, fs), rel_error(gx, fx)))
    return _worst("grad J_con (probs, sigma, image)", errs, t0)


def check_total_grad(seed=3, cases=NUM_CASES, coords_per_case=24) -> CheckResult:
    """Parameter gradient of J_tot on a random coordinate subset per case."""
    rng, t0, errs, redrawn = np.random.default_rng(seed), time.perf_counter(), [], 0
    while len(errs) < cases:
        params, x, lab, dgt = _case(rng)
        mu = float(rng.uniform(0.1, 1.0))
        _, grads = total_loss_grads(params, x, lab, dgt, mu=mu, lam=1.0)
        coords = rng.choice(params.flat().size, coords_per_case, replace=False)
        f = lambda v: total_loss_grads(params.with_flat(v), x, lab, dgt, mu=mu, lam=1.0)[0]["tot"]  # noqa: E731
        guard = lambda v: _kinks(params.with_flat(v), x, dgt)  # noqa: E731
        fd, smooth = fd_gradient(f, params.flat(), coords=coords, guard=guard)
        if not smooth:
            redrawn += 1
            continue
        errs.append(rel_error(grads.flat()[coords], fd))
    return _worst("grad J_tot (parameters)", errs, t0, redrawn)


def check_adv_grad(mode: str, seed=4, cases=NUM_CASES, mu_tilde=1.0) -> CheckResult:
    rng, t0, errs, redrawn = np.random.default_rng(seed), time.perf_counter(), [], 0
    while len(errs) < cases:
        params, x, lab, dgt = _case(rng)
        _, g = adv_gradient(params, x, lab, dgt, mode, mu_tilde)
        f = lambda v: adv_gradient(params, v, np.repeat(lab, len(v), 0), np.repeat(dgt, len(v), 0), mode, mu_tilde, need_grad=False)[0]  # noqa: E731
        guard = lambda v: _kinks(params, v, np.repeat(dgt, len(v), 0))  # noqa: E731
        fd, smooth = fd_gradient_batched(f, x, guard=guard)
        if not smooth:
            redrawn += 1
            continue
        errs.append(rel_error(g, fd))
    return _worst(f"grad J_adv[{mode}] (input)", errs, t0, redrawn)


def gradient_checks() -> list[CheckResult]:
    out = [check_seg_grad(), check_depth_grad(), check_con_grad(), check_total_grad()]
    out += [check_adv_grad(m, seed=4 + k) for k, m in enumerate(LOSS_MODES)]
    return out


# ---------------------------------------------------------------------------
# metric oracles


def naive_miou(pred, gt, num_classes) -> float:
    ious = []
    for c in range(1, num_classes + 1):
        tp = fp = fn = 0
        for p, g in zip(np.ravel(pred), np.ravel(gt)):
            tp += p == c and g == c
            fp += p == c and g != c
            fn += p != c and g == c
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious))


def naive_depth_metrics(pred, gt) -> tuple:
    n = pred.size
    terms: list[list[float]] = [[], [], [], []]
    hits = [0, 0, 0]
    for d, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        terms[0].append(abs(d - g) / g)
        terms[1].append((d - g) ** 2 / g)
        terms[2].append((d - g) ** 2)
        terms[3].append(float(np.log(d) - np.log(g)) ** 2)
        ratio = max(d / g, g / d)
        for k in range(3):
            hits[k] += ratio < 1.25 ** (k + 1)
    sums = [math.fsum(t) for t in terms]
    return (sums[0] / n, sums[1] / n, math.sqrt(sums[2] / n), math.sqrt(sums[3] / n), hits[0] / n, hits[1] / n, hits[2] / n)


def check_metric_oracles(seed=10, cases=50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_miou = worst_depth = 0.0
    for _ in range(cases):
        s = int(rng.integers(2, 6))
        p, g = rng.integers(1, s + 1, (8, 8)), rng.integers(1, s + 1, (8, 8))
        worst_miou = max(worst_miou, abs(miou(p, g, s) - naive_miou(p, g, s)))
        dp, dg = rng.uniform(0.1, 100, (8, 8)), rng.uniform(0.1, 100, (8, 8))
        got = depth_metrics(dp, dg)
        want = naive_depth_metrics(dp, dg)
        fields = (got.abs_rel, got.sq_rel, got.rmse, got.rmse_log, got.a1, got.a2, got.a3)
        worst_depth = max(worst_depth, max(abs(a - b) for a, b in zip(fields, want)))
    out = [
        CheckResult("miou vs brute force", worst_miou == 0.0, worst_miou, 0.0, f"cases={cases}"),
        CheckResult("depth_metrics vs brute force", worst_depth == 0.0, worst_depth, 0.0, f"cases={cases}"),
    ]
    ex = miou(np.array([[1, 2], [2, 2]]), np.array([[1, 1], [2, 2]]), 2)
    out.append(CheckResult("miou hand example 7/12", abs(ex - 7 / 12) <= 1e-12, abs(ex - 7 / 12), 1e-12))
    m = depth_metrics(np.full((4, 4), 2.0), np.ones((4, 4)))
    err = max(abs(m.abs_rel - 1), abs(m.sq_rel - 1), abs(m.rmse - 1), abs(m.rmse_log - np.log(2)))
    out.append(CheckResult("depth_metrics pred=2*gt closed forms", err <= 1e-12, err, 1e-12))
    return out


def check_ssim_identities(seed=11) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    a = EdgeField(rng.uniform(0, 1, (2, 16, 16)))
    b = EdgeField(rng.uniform(0, 1, (2, 16, 16)))
    self_err = abs(float(ssim_global(a, a)) - 1.0)
    sym_err = abs(float(ssim_global(a, b)) - float(ssim_global(b, a)))
    zero, one = EdgeField(np.zeros((2, 16, 16))), EdgeField(np.ones((2, 16, 16)))
    c1 = DETECTOR_SSIM.c1
    zo_err = abs(float(ssim_global(zero, one)) - c1 / (1 + c1))
    return [
        CheckResult("ssim_global(a, a) == 1", self_err <= 1e-9, self_err, 1e-9),
        CheckResult("ssim_global symmetry", sym_err == 0.0, sym_err, 0.0),
        CheckResult("ssim_global(0, 1) == C1/(1+C1)", zo_err <= 1e-9, zo_err, 1e-9),
    ]


def check_vote_table() -> CheckResult:
    from .detector import decide

    bad = sum(int(decide(np.array(v))) != int(sum(v) >= 2) for v in product((0, 1), repeat=3))
    return CheckResult("majority vote truth table", bad == 0, float(bad), 0.0, "combinations=8")


def run_all(include_gradients: bool = True) -> list[CheckResult]:
    out = gradient_checks() if include_gradients else []
    out += check_metric_oracles() + check_ssim_identities() + [check_vote_table()]
    return out
