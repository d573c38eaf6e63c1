"""Bias, MSE and ESS of every weighting method, for either simulation scenario."""

import argparse
from pathlib import Path

from ebcurve import simbench
from ebcurve.bootstrap import default_threads

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--scenario", choices=simbench.SCENARIOS, default="main")
parser.add_argument("--reps", type=int, default=200)
parser.add_argument("--seed", type=int, default=simbench.SimConfig.seed)
parser.add_argument("--threads", type=int, default=default_threads())
parser.add_argument("--out", type=Path, default=None)
args = parser.parse_args()

cfg = simbench.SimConfig(reps=args.reps, scenario=args.scenario, seed=args.seed, threads=args.threads)
table = simbench.run_replications(cfg)
out = args.out or Path("results") / args.scenario
out.mkdir(parents=True, exist_ok=True)
(out / "metrics.csv").write_text(table.to_csv())
(out / "table.txt").write_text(table.to_table() + "\n")
(out / "curves.csv").write_text(table.bundles_csv())
print(table.to_table())
