"""Perturbation sweeps: detection rate and task metrics per (kind, strength).

Every grid cell perturbs the whole test split, runs the network, scores the
outputs and applies the calibrated detector. Per-sample randomness is seeded
from ``(seed, sample seed, kind, strength)``, so a cell's result does not
depend on batch size, cell order or the number of worker processes.
"""
from __future__ import annotations

import csv
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arraycore import make_rng
from ..detector import PAIRS, DetectorConfig, ThresholdSet, detect_batch, score_batch
from ..perturb import EPS_LEVELS, KINDS, AttackSpec, perturb
from ..toymodel.network import ToyNetParams, predict
from .metrics import depth_metrics, histogram, majority_roc_points, miou, roc_auc, roc_points

log = logging.getLogger(__name__)

# attack-ablation rows: (loss mode, mu_tilde)
ABLATION_MODES = (("S", 0.0), ("D", 0.0), ("SD", 0.0), ("SD+ECL", 0.01), ("SD+ECL", 1.0))
_KIND_IDS = {k: i for i, k in enumerate(KINDS)}
_MODE_IDS = {"S": 0, "D": 1, "SD": 2, "SD+ECL": 3}


@dataclass(frozen=True)
class SweepConfig:
    kinds: tuple[str, ...] = KINDS
    eps_levels: tuple[int, ...] = EPS_LEVELS
    loss_mode: str = "SD"
    mu_tilde: float = 0.0
    steps: int = 10
    ablation_kind: str = "pgd"
    ablation_modes: tuple[tuple[str, float], ...] = ABLATION_MODES
    seed: int = 0
    batch_size: int = 4
    jobs: int = 1


@dataclass
class SweepRow:
    kind: str
    mode: str
    eps_levels: int
    tpr: float
    fpr: float
    miou: float
    delta1: float
    rms: float
    consistency: tuple[float, float, float]


@dataclass
class CellResult:
    row: SweepRow
    scores: np.ndarray  # (N, 3)


@dataclass
class SweepReport:
    clean_scores: np.ndarray
    rows: list[SweepRow] = field(default_factory=list)
    ablation_rows: list[SweepRow] = field(default_factory=list)
    cell_scores: dict = field(default_factory=dict)  # (kind, mode label, eps) -> (N, 3)

    def tpr_table(self, rows=None) -> dict:
        """{(kind, mode): {eps: tpr}} for Table III/IV style layouts."""
        out: dict = {}
        for r in self.rows if rows is None else rows:
            out.setdefault((r.kind, r.mode), {})[r.eps_levels] = r.tpr
        return out


@dataclass
class _Context:
    params: ToyNetParams
    thresholds: ThresholdSet
    det_cfg: DetectorConfig
    images: np.ndarray
    labels: np.ndarray
    depths: np.ndarray
    sample_ids: np.ndarray
    num_classes: int
    clean_decisions: np.ndarray
    cfg: SweepConfig


_CTX: _Context | None = None


def sample_rngs(seed: int, sample_ids, kind: str, mode: str, eps: int) -> list[np.random.Generator]:
    """One generator per sample, keyed by (seed, sample id, kind, loss mode, strength)."""
    return [
        make_rng(np.random.SeedSequence([seed, int(sid), _KIND_IDS[kind], _MODE_IDS[mode], eps]).generate_state(1, np.uint64)[0])
        for sid in sample_ids
    ]


def _evaluate(ctx: _Context, images: np.ndarray):
    depth, labels = predict(ctx.params, images, ctx.cfg.batch_size)
    scores = score_batch(images, depth, labels, ctx.det_cfg)
    _, decisions = detect_batch(scores, ctx.thresholds, ctx.det_cfg)
    m = np.mean([miou(labels[k], ctx.labels[k], ctx.num_classes) for k in range(len(images))])
    d1 = np.mean([depth_metrics(depth[k], ctx.depths[k]).a1 for k in range(len(images))])
    return scores, decisions, float(m), float(d1)


def _run_cell(args) -> CellResult:
    kind, mode, mu_tilde, eps = args
    ctx = _CTX
    label = AttackSpec(kind="fgsm", eps_levels=1, loss_mode=mode, mu_tilde=mu_tilde).label
    if eps == 0:
        perturbed, r = ctx.images, np.zeros_like(ctx.images)
    else:
        spec = AttackSpec(kind, eps, mode, mu_tilde, steps=ctx.cfg.steps, seed=ctx.cfg.seed)
        rngs = sample_rngs(ctx.cfg.seed, ctx.sample_ids, kind, mode, eps)
        bs = ctx.cfg.batch_size
        chunks = [
            perturb(ctx.params, ctx.images[s : s + bs], ctx.labels[s : s + bs], ctx.depths[s : s + bs], spec, rngs[s : s + bs])[0]
            for s in range(0, len(ctx.images), bs)
        ]
        perturbed = np.concatenate(chunks)
        r = perturbed - ctx.images
    scores, decisions, m, d1 = _evaluate(ctx, perturbed)
    tpr = float(decisions.mean())
    row = SweepRow(
        kind=kind,
        mode=label,
        eps_levels=eps,
        tpr=tpr,
        fpr=float(ctx.clean_decisions.mean()),
        miou=m,
        delta1=d1,
        rms=float(np.sqrt(np.mean(r**2))),
        consistency=tuple(float(v) for v in scores.mean(axis=0)),
    )
    log.info("%s %s eps=%d: TPR=%.3f mIoU=%.3f", kind, label, eps, tpr, m)
    return CellResult(row, scores)


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def run_sweep(
    params: ToyNetParams,
    thresholds: ThresholdSet,
    images,
    labels,
    depth_gt,
    sample_ids=None,
    cfg: SweepConfig = SweepConfig(),
    det_cfg: DetectorConfig | None = None,
    on_cell=None,
) -> SweepReport:
    """Main grid (``cfg.kinds`` x ``cfg.eps_levels``) plus the attack-loss ablation.

    Strength level 0 means "no perturbation". Ablation cells that coincide
    with a main-grid cell are reused rather than recomputed. ``on_cell`` is
    called with each finished :class:`CellResult`, in grid order.
    """
    global _CTX
    det_cfg = det_cfg or thresholds.config
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    depth_gt = np.asarray(depth_gt)
    sample_ids = np.arange(len(images)) if sample_ids is None else np.asarray(sample_ids)

    ctx = _Context(params, thresholds, det_cfg, images, labels, depth_gt, sample_ids, params.num_classes, None, cfg)
    _CTX = ctx
    depth, lab = predict(params, images, cfg.batch_size)
    clean_scores = score_batch(images, depth, lab, det_cfg)
    _, ctx.clean_decisions = detect_batch(clean_scores, thresholds, det_cfg)

    main = [(k, cfg.loss_mode, cfg.mu_tilde, e) for k in cfg.kinds for e in cfg.eps_levels]
    ablation = [(cfg.ablation_kind, m, mu, e) for m, mu in cfg.ablation_modes for e in cfg.eps_levels]
    cells = list(dict.fromkeys(main + [c for c in ablation if c not in main]))

    results = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            for res in pool.map(_run_cell, cells):
                results.append(res)
                if on_cell is not None:
                    on_cell(res)
    else:
        for c in cells:
            results.append(_run_cell(c))
            if on_cell is not None:
                on_cell(results[-1])
    by_cell = dict(zip(cells, results))

    report = SweepReport(clean_scores=clean_scores)
    for c in main:
        report.rows.append(by_cell[c].row)
    for c in ablation:
        report.ablation_rows.append(by_cell[c].row)
    for c, res in by_cell.items():
        report.cell_scores[(res.row.kind, res.row.mode, res.row.eps_levels)] = res.scores
    return report


# ---------------------------------------------------------------------------
# CSV output

_ROW_HEADER = ["kind", "mode", "eps_levels", "tpr", "fpr", "miou", "delta1", "rms", "ssim_mx", "ssim_xd", "ssim_md"]


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def _write_rows(path: Path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(_ROW_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in (r.kind, r.mode, r.eps_levels, r.tpr, r.fpr, r.miou, r.delta1, r.rms, *r.consistency)])


def _write_table(path: Path, rows: list[SweepRow]) -> None:
    """TPR in percent, one line per (kind, mode), strengths as columns plus the average."""
    table: dict = {}
    for r in rows:
        table.setdefault((r.kind, r.mode), {})[r.eps_levels] = 100 * r.tpr
    levels = sorted({r.eps_levels for r in rows})
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["kind", "mode", *levels, "average"])
        for (kind, mode), tprs in table.items():
            vals = [tprs[e] for e in levels]
            w.writerow([kind, mode, *(f"{v:.1f}" for v in vals), f"{np.mean(vals):.1f}"])


def _write_points(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_report(report: SweepReport, outdir) -> None:
    """sweep.csv, tableIII.csv, tableIV.csv and per-kind ROC / histogram files."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "sweep.csv", report.rows)
    _write_table(out / "tableIII.csv", report.rows)
    _write_rows(out / "tableIV.csv", report.ablation_rows)
    _write_table(out / "tableIV_tpr.csv", report.ablation_rows)

    for j, pair in enumerate(PAIRS):
        edges, counts = histogram(report.clean_scores[:, j])
        _write_points(out / f"hist_{pair}_0.csv", ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts))
    for (kind, mode, eps), scores in report.cell_scores.items():
        sub = out / (kind if mode == report.rows[0].mode else f"{kind}_{mode}")
        sub.mkdir(exist_ok=True)
        for j, pair in enumerate(PAIRS):
            pts = roc_points(report.clean_scores[:, j], scores[:, j])
            _write_points(sub / f"roc_{pair}_{eps}.csv", ["fpr", "tpr"], pts)
            edges, counts = histogram(scores[:, j])
            _write_points(sub / f"hist_{pair}_{eps}.csv", ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts))
        pts = majority_roc_points(report.clean_scores, scores)
        _write_points(sub / f"roc_majority_{eps}.csv", ["fpr", "tpr"], pts)


def auc_per_pair(report: SweepReport, kind: str, mode: str, eps: int) -> list[float]:
    scores = report.cell_scores[(kind, mode, eps)]
    return [roc_auc(roc_points(report.clean_scores[:, j], scores[:, j])) for j in range(3)]


def flush_failure(outdir, rows: list[SweepRow], exc: BaseException) -> None:
    """Write the rows that finished to sweep.csv plus a FAILED marker with the traceback."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "sweep.csv", rows)
    (out / "FAILED").write_text("".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))
