"""Average and maximum balance statistics over replications of the main design."""

import argparse
from pathlib import Path

from ebcurve import simbench
from ebcurve.bootstrap import default_threads

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--reps", type=int, default=200)
parser.add_argument("--seed", type=int, default=simbench.SimConfig.seed)
parser.add_argument("--threads", type=int, default=default_threads())
parser.add_argument("--out", type=Path, default=Path("results/balance"))
args = parser.parse_args()

cfg = simbench.SimConfig(reps=args.reps, seed=args.seed, threads=args.threads)
table = simbench.run_replications(cfg)
args.out.mkdir(parents=True, exist_ok=True)
(args.out / "balance.txt").write_text(table.balance_table() + "\n")
print(table.balance_table())
