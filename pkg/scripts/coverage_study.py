"""Pointwise coverage of the whole-pipeline bootstrap interval on the main design."""

import argparse
from pathlib import Path

import numpy as np

from ebcurve import simbench
from ebcurve.bootstrap import default_threads

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--reps", type=int, default=200)
parser.add_argument("--B", type=int, default=100)
parser.add_argument("--method", default="eb_2")
parser.add_argument("--seed", type=int, default=simbench.SimConfig.seed)
parser.add_argument("--threads", type=int, default=default_threads())
parser.add_argument("--out", type=Path, default=Path("results/coverage"))
args = parser.parse_args()

cfg = simbench.SimConfig(reps=args.reps, seed=args.seed, threads=args.threads)
cov = simbench.coverage_study(cfg, B=args.B, method=args.method)
args.out.mkdir(parents=True, exist_ok=True)
(args.out / "coverage.csv").write_text(cov.to_csv())
region = cov.region()
print(f"exposure 5%-95%: [{cov.exposure_quantiles[0.05]:.2f}, {cov.exposure_quantiles[0.95]:.2f}]")
print(f"{'a0':>5} {'coverage':>9} {'se':>7} {'sd':>7} {'ratio':>6}")
for a, c, s, d, r, inside in zip(cov.grid, cov.coverage, cov.mean_se, cov.sampling_sd, cov.ratio, region):
    print(f"{a:5.0f} {c:9.3f} {s:7.3f} {d:7.3f} {r:6.2f}{'' if inside else '  (outside)'}")
print(f"min coverage in region {np.nanmin(cov.coverage[region]):.3f}; mean ratio {np.nanmean(cov.ratio[region]):.2f}")
