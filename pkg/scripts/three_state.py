"""One model for the whole three-state Gamma family (c1, c3 in (0.2, 0.8)).

Trains on t_max = 2 and rolls the model out to t = 40 at c1 = 0.3 for four
values of c3, alongside RK4.
"""
import argparse
import sys
from pathlib import Path

from nqp.cli import main

POINTS = ("0.3,0.2", "0.3,0.4", "0.3,0.6", "0.3,0.8")


def run(out: Path, seed: int, epochs: int | None, horizon: str) -> int:
    common = ["--preset", "three_state_gamma", "--seed", str(seed), "--threads", "1"]
    train = ["train", *common, "--out", str(out)]
    if epochs is not None:
        train += ["--epochs", str(epochs)]
    if (code := main(train)) != 0:
        return code
    ckpt = str(out / "checkpoint.nqpm")
    fields = [a for c in POINTS for a in ("--field", c)]
    code = main(["validate", *common, "--checkpoint", ckpt, *fields, "--horizon", horizon,
                 "--out", str(out / "validation")])
    for c in POINTS:
        tag = c.replace(",", "_")
        code = code or main(["predict", *common, "--checkpoint", ckpt, "--field", c,
                             "--horizon", horizon, "--out", str(out / f"nqp_c{tag}.csv"),
                             "--reference", str(out / f"rk4_c{tag}.csv")])
    return code


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/three_state"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--horizon", default="40")
    a = p.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    sys.exit(run(a.out, a.seed, a.epochs, a.horizon))
