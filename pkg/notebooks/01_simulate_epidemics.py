"""
Simulating SIRD epidemics
=========================

A chain-binomial SIRD model: every step draws infections, recoveries,
deaths and waning immunity as binomial counts.
"""

import numpy as np

from xferepi import simcore as sc
from xferepi.rng import make_rng

cfg = sc.SimConfig(t_max=300, replicates=5, seed=1)
print("source disease:", sc.SOURCE_PARAMS)

# one trajectory: columns s, i, r, d, new infections, t
traj = sc.simulate_trajectory(cfg, sc.SOURCE_PARAMS, make_rng(cfg.seed, "demo"))
sc.check_trajectory(traj, cfg.population_n)
peak = int(np.argmax(traj[:, 4]))
print(f"incidence peaks at step {peak} with {traj[peak, 4]} new cases")
print(f"deaths after {cfg.t_max} steps: {traj[-1, 3]}")

# the weekly incidence series the forecasters see
series = sc.simulate(cfg, sc.SOURCE_PARAMS, replicate=0)
print("first 20 steps:", series.values[:20].tolist())

# a grid of target diseases, each with disjoint train and test cities
grid = sc.generate_grid(sc.SOURCE_PARAMS, [0.25, 0.35], [0.01, 0.15], cfg)
for d in grid:
    totals = [int(s.values.sum()) for s in d.train]
    print(f"{d.label:<24} train cities={len(d.train)} total cases={totals}")
