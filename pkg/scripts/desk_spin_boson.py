"""Desk-scale spin-boson run: train on t_max = 5, then compare with RK4 out to t = 40.

Writes checkpoint, loss curve, validation report and one trajectory CSV per
driving frequency (model and RK4) under --out.
"""
import argparse
import sys
from pathlib import Path

from nqp.cli import main

FREQUENCIES = ("0.2", "0.4", "0.6", "1.0")


def run(out: Path, seed: int, epochs: int | None, tmax: str, horizon: str) -> int:
    common = ["--preset", "spin_boson", "--seed", str(seed), "--tmax", tmax, "--threads", "1"]
    train = ["train", *common, "--out", str(out)]
    if epochs is not None:
        train += ["--epochs", str(epochs)]
    if (code := main(train)) != 0:
        return code
    ckpt = str(out / "checkpoint.nqpm")
    fields = [a for w in FREQUENCIES for a in ("--field", w)]
    code = main(["validate", *common, "--checkpoint", ckpt, *fields, "--horizon", horizon,
                 "--out", str(out / "validation")])
    for w in FREQUENCIES:
        code = code or main(["predict", *common, "--checkpoint", ckpt, "--field", w,
                             "--horizon", horizon, "--out", str(out / f"nqp_w{w}.csv"),
                             "--reference", str(out / f"rk4_w{w}.csv")])
    return code


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/spin_boson"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tmax", default="5")
    p.add_argument("--horizon", default="40")
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    sys.exit(run(a.out, a.seed, a.epochs, a.tmax, a.horizon))
