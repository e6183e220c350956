"""The six-command generate -> train -> calibrate -> sweep reproduction.

``python -m edgeguard.reproduce OUT`` runs it at full scale; ``commands``
returns the argument lists so they can also be run at reduced sizes.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

from .cli import main


@dataclass(frozen=True)
class Scale:
    n_train: int = 200
    n_val: int = 500
    n_test: int = 200
    epochs: int = 40
    eps_levels: str = "1,2,4,8,16,32"
    steps: int = 10


def commands(out, seed: int = 0, scale: Scale = Scale()) -> list[list[str]]:
    o = Path(out)
    s = ["--seed", str(seed)]
    return [
        ["generate", "--split", "train", "--n", str(scale.n_train), "--out", str(o / "train"), *s],
        ["generate", "--split", "val", "--n", str(scale.n_val), "--out", str(o / "val"), *s],
        ["generate", "--split", "test", "--n", str(scale.n_test), "--out", str(o / "test"), *s],
        ["train", "--data", str(o / "train"), "--epochs", str(scale.epochs), "--out", str(o / "model"), *s],
        ["calibrate", "--checkpoint", str(o / "model"), "--data", str(o / "val"), "--out", str(o / "cal"), *s],
        [
            "sweep",
            "--checkpoint", str(o / "model"),
            "--thresholds", str(o / "cal" / "thresholds.txt"),
            "--data", str(o / "test"),
            "--eps-levels", scale.eps_levels,
            "--steps", str(scale.steps),
            "--out", str(o / "sweep"),
            *s,
        ],
    ]  # fmt: skip


def run(out, seed: int = 0, scale: Scale = Scale()) -> int:
    for argv in commands(out, seed, scale):
        code = main(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: python -m edgeguard.reproduce OUTDIR")
    sys.exit(run(sys.argv[1]))
