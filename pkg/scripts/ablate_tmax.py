"""Training-window ablation: spin-boson models with t_max = 5 and 10, p_g(t) up to t = 40.

The resulting pg_table.csv holds RK4 and both models for every driving
frequency; ablation.json has the within/beyond-window errors.
"""
import argparse
import sys
from pathlib import Path

from nqp.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("runs/ablate_tmax"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tmax", nargs="+", default=["5", "10"])
    a = p.parse_args()
    args = ["ablate-tmax", "--preset", "spin_boson", "--seed", str(a.seed), "--threads", "1",
            "--tmax", *a.tmax, "--horizon", "40", "--out", str(a.out)]
    for w in ("0.2", "0.4", "0.6", "1.0"):
        args += ["--field", w]
    if a.epochs is not None:
        args += ["--epochs", str(a.epochs)]
    sys.exit(main(args))
