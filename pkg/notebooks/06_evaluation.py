"""
Scoring and comparing regimes
=============================

Errors are divided by each city's total cases, the best regime is counted
per city, and diseases are compared by their median correlation with the
source.
"""

import numpy as np

from xferepi import evaluate as ev
from xferepi import simcore as sc

print("pmae:", ev.percent_mae([10, 12, 9], [11, 12, 7], total_cases=300))

records = [ev.EvalRecord(g, "d", city, 2, None, 0.0, v)
           for city, vals in {"a": (0.1, 0.2), "b": (0.3, 0.1), "c": (0.2, 0.2)}.items()
           for g, v in zip(("rf_baseline", "nn_baseline"), vals)]
for f in ev.best_model_frequency(records):
    print(f"{f.regime:<12} wins {f.count} (ties {f.ties})")

cfg = sc.SimConfig(replicates=20, t_max=1000, seed=0)
grid = sc.generate_grid(sc.SOURCE_PARAMS, [0.25, 0.35], [0.01, 0.15], cfg)
smap = ev.similarity_map(grid[0].train, {d.label: d.train for d in grid[1:]})
print(smap.to_csv())
print("most similar:", smap.argmax(), "least similar:", smap.argmin())

bundle = ev.assemble_report(records, smap)
print(bundle["summary.txt"])
