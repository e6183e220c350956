import numpy as np
import pytest

from edgeguard.arraycore import make_rng
from edgeguard.detector import calibrate, score_batch
from edgeguard.evalharness.sweep import SweepConfig, auc_per_pair, flush_failure, run_sweep, write_report
from edgeguard.synthscenes import SceneSpec, generate_split, stack_split
from edgeguard.toymodel import init_params, predict

SPEC = SceneSpec(height=16, width=16, num_shapes=3)
GRID = SweepConfig(kinds=("gaussian", "salt_pepper", "fgsm", "pgd"), eps_levels=(4, 16), steps=2, ablation_modes=(("SD", 0.0), ("SD+ECL", 1.0)))


@pytest.fixture(scope="module")
def setup():
    params = init_params(5, make_rng(0))
    cal = stack_split(generate_split(SPEC, 40, "val"))
    depth, labels = predict(params, cal[0])
    thresholds = calibrate(score_batch(cal[0], depth, labels))
    samples = generate_split(SPEC, 12, "test")
    images, depths, labs = stack_split(samples)
    return params, thresholds, images, labs, depths, np.array([s.seed for s in samples])


def _run(setup, cfg=GRID):
    params, thresholds, images, labs, depths, seeds = setup
    return run_sweep(params, thresholds, images, labs, depths, seeds, cfg)


def test_null_grid_tpr_equals_fpr(setup):
    report = _run(setup, SweepConfig(kinds=("fgsm", "gaussian"), eps_levels=(0,), ablation_modes=()))
    for row in report.rows:
        assert row.tpr == row.fpr
        assert row.rms == 0.0


def test_rows_cover_grid(setup):
    report = _run(setup)
    assert [(r.kind, r.eps_levels) for r in report.rows] == [(k, e) for k in GRID.kinds for e in GRID.eps_levels]
    assert [(r.mode, r.eps_levels) for r in report.ablation_rows] == [(m, e) for m in ("SD", "SD+ECL(1)") for e in (4, 16)]
    for r in report.rows + report.ablation_rows:
        assert 0 <= r.tpr <= 1 and 0 <= r.fpr <= 1
    assert len(auc_per_pair(report, "fgsm", "SD", 16)) == 3


def test_fgsm_rms_matches_strength(setup):
    report = _run(setup, SweepConfig(kinds=("fgsm",), eps_levels=(8,), ablation_modes=()))
    # post-clip RMS can only shrink
    assert 0.5 * 8 / 255 < report.rows[0].rms <= 8 / 255 + 1e-12


def test_csv_bytes_deterministic(setup, tmp_path):
    write_report(_run(setup), tmp_path / "a")
    write_report(_run(setup), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert len(files) > 10
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_jobs_and_batch_size_do_not_change_results(setup, tmp_path):
    base = _run(setup)
    cfg = SweepConfig(**{**GRID.__dict__, "jobs": 2, "batch_size": 5})
    other = _run(setup, cfg)
    assert [r.__dict__ for r in base.rows] == [r.__dict__ for r in other.rows]
    assert [r.__dict__ for r in base.ablation_rows] == [r.__dict__ for r in other.ablation_rows]


def test_report_files(setup, tmp_path):
    write_report(_run(setup), tmp_path)
    for name in ("sweep.csv", "tableIII.csv", "tableIV.csv", "hist_mx_0.csv", "fgsm/roc_xd_16.csv", "pgd/roc_majority_4.csv", "pgd_SD+ECL(1)/roc_majority_4.csv"):
        assert (tmp_path / name).is_file(), name
    header, *lines = (tmp_path / "tableIII.csv").read_text().splitlines()
    assert header == "kind,mode,4,16,average" and len(lines) == len(GRID.kinds)
    hist = (tmp_path / "hist_md_0.csv").read_text().splitlines()
    assert len(hist) == 51


def test_failure_flush(setup, tmp_path):
    params, thresholds, images, labs, depths, seeds = setup
    done = []

    def boom(res):
        done.append(res.row)
        if len(done) == 2:
            raise RuntimeError("disk full")

    with pytest.raises(RuntimeError) as info:
        run_sweep(params, thresholds, images, labs, depths, seeds, GRID, on_cell=boom)
    flush_failure(tmp_path, done, info.value)
    assert "disk full" in (tmp_path / "FAILED").read_text()
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 3
