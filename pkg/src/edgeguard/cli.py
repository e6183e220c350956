"""Command-line entry point: ``edgeguard <subcommand> [flags]``.

Config files are flat ``key = value`` text (``#`` starts a comment, keys use
the long flag names with ``-`` or ``_``). Flags given on the command line
override the file. Without ``--seed`` the ``EDGEGUARD_SEED`` environment
variable is used, then 0.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .arraycore import make_rng, read_raw, write_raw
from .detector import DetectorConfig, calibrate, detect_batch, read_thresholds, score_batch, write_thresholds
from .evalharness.sweep import SweepConfig, flush_failure, run_sweep, sample_rngs, write_report
from .perturb import EPS_LEVELS, KINDS, AttackSpec, perturb, rms
from .synthscenes import SceneSpec, generate_split, split_seeds, stack_split
from .toymodel.network import ToyNetParams, init_params, predict
from .toymodel.objectives import LOSS_MODES, adv_loss
from .toymodel.training import TrainConfig, train

log = logging.getLogger("edgeguard")


class UsageError(Exception):
    """Invalid flags, config or inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.replace(",", " ").split())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, help="global seed (default: $EDGEGUARD_SEED or 0)")
    p.add_argument("--out", help="output directory (required)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("-v", "--verbose", action="store_true")


def _scene_flags(p):
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--num-shapes", type=int, default=5)
    p.add_argument("--texture", type=float, default=SceneSpec.texture)


def _detector_flags(p):
    p.add_argument("--metric", choices=("ssim", "mae"), default="ssim")
    p.add_argument("--edge-mode", choices=("continuous", "binary"), default="continuous")
    p.add_argument("--vote-mode", choices=("majority", "mx", "xd", "md"), default="majority")
    p.add_argument("--target-fpr", type=float, default=0.05)
    p.add_argument("--top-fraction", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgeguard", description="Edge-consistency perturbation detection on a toy multi-task network.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="{generate,train,calibrate,attack,detect,sweep,selftest}", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic split as flat arrays")
    _common(p)
    _scene_flags(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--split", choices=("train", "val", "test"), default="train")

    p = sub.add_parser("train", help="train the toy network on a generated split")
    _common(p)
    p.add_argument("--data", help="directory written by 'generate' (required)")
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--mu", type=float, default=TrainConfig.mu)
    p.add_argument("--lam", type=float, default=TrainConfig.lam)

    p = sub.add_parser("calibrate", help="fit detector thresholds on clean data")
    _common(p)
    _detector_flags(p)
    p.add_argument("--checkpoint", help="directory written by 'train' (required)")
    p.add_argument("--data", help="clean calibration split (required)")

    p = sub.add_parser("attack", help="perturb a split and log strengths and losses")
    _common(p)
    p.add_argument("--checkpoint", help="directory written by 'train' (required)")
    p.add_argument("--data", help="split to perturb (required)")
    p.add_argument("--kind", choices=KINDS, default="fgsm")
    p.add_argument("--eps", type=int, default=8, help="strength in 8-bit levels")
    p.add_argument("--loss-mode", choices=LOSS_MODES, default="SD")
    p.add_argument("--mu-tilde", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=10)

    p = sub.add_parser("detect", help="score a split and apply calibrated thresholds")
    _common(p)
    p.add_argument("--checkpoint", help="directory written by 'train' (required)")
    p.add_argument("--thresholds", help="file written by 'calibrate' (required)")
    p.add_argument("--data", help="split to score (required)")

    p = sub.add_parser("sweep", help="perturbation grid with detection and task metrics")
    _common(p)
    p.add_argument("--checkpoint", help="directory written by 'train' (required)")
    p.add_argument("--thresholds", help="file written by 'calibrate' (required)")
    p.add_argument("--data", help="test split (required)")
    p.add_argument("--kinds", type=_str_list, default=KINDS)
    p.add_argument("--eps-levels", type=_int_list, default=EPS_LEVELS)
    p.add_argument("--loss-mode", choices=LOSS_MODES, default="SD")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--no-ablation", action="store_true", help="skip the attack-loss ablation grid")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("selftest", help="gradient certification and metric oracles")
    p.add_argument("--quick", action="store_true", help="skip the finite-difference gradient checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


REQUIRED = {
    "generate": ("out",),
    "train": ("out", "data"),
    "calibrate": ("out", "checkpoint", "data"),
    "attack": ("out", "checkpoint", "data"),
    "detect": ("out", "checkpoint", "thresholds", "data"),
    "sweep": ("out", "checkpoint", "thresholds", "data"),
}


# ---------------------------------------------------------------------------
# config resolution


def read_config_file(path) -> dict[str, str]:
    out = {}
    for num, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill flags not given explicitly."""
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("missing subcommand")
    config = getattr(args, "config", None)
    if config:
        if not Path(config).is_file():
            raise UsageError(f"config file not found: {config}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        given = {a.dest for a in sub._actions for opt in a.option_strings if any(t == opt or t.startswith(opt + "=") for t in argv)}
        for key, value in read_config_file(config).items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            if key in given:
                continue
            act = actions[key]
            if isinstance(act, argparse._StoreTrueAction):
                val = value.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    val = act.type(value) if act.type else value
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {value!r}") from exc
                if act.choices and val not in act.choices:
                    raise UsageError(f"{key} must be one of {sorted(act.choices)}")
            setattr(args, key, val)
    if hasattr(args, "seed") and args.seed is None:
        env = os.environ.get("EDGEGUARD_SEED")
        try:
            args.seed = int(env) if env is not None else 0
        except ValueError as exc:
            raise UsageError(f"EDGEGUARD_SEED must be an integer, got {env!r}") from exc
    for name in REQUIRED.get(args.command, ()):
        if getattr(args, name) in (None, ""):
            raise UsageError(f"{args.command}: missing required flag --{name.replace('_', '-')}")
    return args


def _prepare_out(args, artifacts: list[str]) -> Path:
    out = Path(args.out)
    existing = [a for a in artifacts if (out / a).exists()]
    if existing and not args.force:
        raise UsageError(f"{out} already contains {existing[0]}; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    skip = {"config", "force", "verbose", "func"}
    lines = [f"{k} = {_cfg_value(v)}" for k, v in sorted(vars(args).items()) if k not in skip]
    (out / "resolved_config.txt").write_text("\n".join(lines) + "\n")
    return out


def _cfg_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(t) for t in v)
    return str(v)


# ---------------------------------------------------------------------------
# data and checkpoint files


def save_split(out: Path, samples, split: str, spec: SceneSpec) -> None:
    images, depths, labels = stack_split(samples)
    write_raw(out / "images.egr", images)
    write_raw(out / "depth.egr", depths)
    write_raw(out / "labels.egr", (labels - 1).astype(np.uint16))
    lines = [
        f"split = {split}",
        f"n = {len(samples)}",
        f"num_classes = {spec.num_classes}",
        "seeds = " + ",".join(str(s.seed) for s in samples),
    ]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_split(path):
    """(images, depths, labels, seeds, num_classes) from a 'generate' directory."""
    d = Path(path)
    if not (d / "manifest.txt").is_file():
        raise UsageError(f"{d} is not a generated split (manifest.txt missing)")
    manifest = read_config_file(d / "manifest.txt")
    images = read_raw(d / "images.egr").astype(np.float64)
    depths = read_raw(d / "depth.egr").astype(np.float64)
    labels = read_raw(d / "labels.egr").astype(np.int64) + 1
    seeds = np.array([int(s) for s in manifest["seeds"].split(",")])
    return images, depths, labels, seeds, int(manifest["num_classes"])


def save_checkpoint(out: Path, params: ToyNetParams) -> None:
    lines = []
    for name, arr in params.arrays().items():
        write_raw(out / f"{name}.egr", arr.astype(np.float64))
        lines.append(f"{name} {'x'.join(str(s) for s in arr.shape)}")
    (out / "layers.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ToyNetParams:
    d = Path(path)
    if not (d / "layers.txt").is_file():
        raise UsageError(f"{d} is not a checkpoint (layers.txt missing)")
    arrays = {}
    for line in (d / "layers.txt").read_text().splitlines():
        name, shape = line.split()
        arr = read_raw(d / f"{name}.egr")
        if "x".join(str(s) for s in arr.shape) != shape:
            raise UsageError(f"checkpoint layer {name} has shape {arr.shape}, manifest says {shape}")
        arrays[name] = arr.copy()
    return ToyNetParams(**arrays)


def _detector_cfg(args) -> DetectorConfig:
    return DetectorConfig(args.metric, args.edge_mode, args.vote_mode, args.target_fpr, args.top_fraction)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    spec = SceneSpec(args.height, args.width, args.num_classes, args.num_shapes, texture=args.texture, seed=args.seed)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = _prepare_out(args, ["manifest.txt", "images.egr"])
    save_split(out, generate_split(spec, args.n, args.split), args.split, spec)
    log.info("wrote %d %s samples (seeds %d..)", args.n, args.split, split_seeds(1, args.split, args.seed)[0])
    return 0


def cmd_train(args) -> int:
    images, depths, labels, _, num_classes = load_split(args.data)
    cfg = TrainConfig(args.lr, args.epochs, args.batch_size, args.mu, args.lam, args.seed)
    out = _prepare_out(args, ["layers.txt", "train_log.csv"])
    params, history = train(init_params(num_classes, make_rng(args.seed)), images, labels, depths, cfg)
    save_checkpoint(out, params)
    with open(out / "train_log.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "seg", "depth", "con", "tot"])
        for k, h in enumerate(history):
            w.writerow([k, *(f"{h[key]:.6f}" for key in ("seg", "depth", "con", "tot"))])
    return 0


def cmd_calibrate(args) -> int:
    params = load_checkpoint(args.checkpoint)
    images, _, _, _, _ = load_split(args.data)
    cfg = _detector_cfg(args)
    out = _prepare_out(args, ["thresholds.txt"])
    depth, labels = predict(params, images)
    ts = calibrate(score_batch(images, depth, labels, cfg), cfg)
    write_thresholds(ts, out / "thresholds.txt")
    log.info("gamma=%.4f achieved FPR=%.4f on %d clean samples", ts.gamma, ts.achieved_fpr, ts.n)
    return 0


def cmd_attack(args) -> int:
    params = load_checkpoint(args.checkpoint)
    images, depths, labels, seeds, _ = load_split(args.data)
    spec = AttackSpec(args.kind, args.eps, args.loss_mode, args.mu_tilde, steps=args.steps, seed=args.seed)
    out = _prepare_out(args, ["attack_log.csv", "perturbed.egr"])
    rngs = sample_rngs(args.seed, seeds, args.kind, args.loss_mode, args.eps)
    chunks, rs = [], []
    for s in range(0, len(images), 4):
        x, r = perturb(params, images[s : s + 4], labels[s : s + 4], depths[s : s + 4], spec, rngs[s : s + 4])
        chunks.append(x)
        rs.append(r)
    perturbed, r = np.concatenate(chunks), np.concatenate(rs)
    before = adv_loss(params, images, labels, depths, args.loss_mode, args.mu_tilde)
    after = adv_loss(params, perturbed, labels, depths, args.loss_mode, args.mu_tilde)
    write_raw(out / "perturbed.egr", perturbed.astype(np.float32))
    write_raw(out / "perturbations.egr", r)
    with open(out / "attack_log.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "kind", "eps_levels", "rms_levels", "loss_before", "loss_after"])
        for k, sid in enumerate(seeds):
            w.writerow([int(sid), args.kind, args.eps, f"{rms(r[k]) * 255:.6f}", f"{before[k]:.6f}", f"{after[k]:.6f}"])
    return 0


def cmd_detect(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ts = read_thresholds(args.thresholds)
    images, _, _, seeds, _ = load_split(args.data)
    out = _prepare_out(args, ["detections.csv"])
    depth, labels = predict(params, images)
    scores = score_batch(images, depth, labels, ts.config)
    votes, decisions = detect_batch(scores, ts)
    with open(out / "detections.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "ssim_mx", "ssim_xd", "ssim_md", "vote_mx", "vote_xd", "vote_md", "decision"])
        for k, sid in enumerate(seeds):
            w.writerow([int(sid), *(f"{v:.6f}" for v in scores[k]), *votes[k].tolist(), int(decisions[k])])
    log.info("flagged %d of %d samples", int(decisions.sum()), len(decisions))
    return 0


def cmd_sweep(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ts = read_thresholds(args.thresholds)
    images, depths, labels, seeds, _ = load_split(args.data)
    bad = [k for k in args.kinds if k not in KINDS]
    if bad:
        raise UsageError(f"unknown perturbation kind {bad[0]!r}")
    if any(e < 0 for e in args.eps_levels):
        raise UsageError("strength levels must be nonnegative")
    cfg = SweepConfig(
        kinds=tuple(args.kinds),
        eps_levels=tuple(args.eps_levels),
        loss_mode=args.loss_mode,
        steps=args.steps,
        ablation_modes=() if args.no_ablation else SweepConfig.ablation_modes,
        seed=args.seed,
        jobs=args.jobs,
    )
    out = _prepare_out(args, ["sweep.csv"])
    done = []
    try:
        report = run_sweep(params, ts, images, labels, depths, seeds, cfg, on_cell=lambda res: done.append(res.row))
    except Exception as exc:
        flush_failure(out, done, exc)
        raise
    write_report(report, out)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(include_gradients=not args.quick)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "attack": cmd_attack,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = resolve(parser, argv)
    except UsageError as exc:
        print(f"edgeguard: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"edgeguard: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"edgeguard: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"edgeguard: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
