"""
Turning series into supervised rows
===================================

Nine lagged values predict the value h steps after the last lag.  All
horizons share the same target indices, and a cutoff hides everything at
or after a given step.
"""

import numpy as np

from xferepi import datasets as ds
from xferepi import simcore as sc

series = sc.simulate(sc.SimConfig(t_max=1000, seed=3), sc.SOURCE_PARAMS)
window = ds.WindowConfig()
print("first shared target index:", window.first_target)

for h in (2, 5, 9):
    d = ds.build_dataset([series], window, h)
    print(f"h={h}: {len(d)} rows, targets {d.target_t[0]}..{d.target_t[-1]}")

# early in an outbreak only a handful of rows exist
for cutoff in (25, 35, 50):
    d = ds.build_dataset([series], window, 2, cutoff=cutoff)
    print(f"cutoff {cutoff}: {len(d)} rows")

row = ds.build_dataset([series], window, 2).take(np.array([100]))
print("lags:", row.features[0].tolist(), "target:", row.targets[0], "scale:", row.scale[0])

train, test = ds.split_cities([sc.simulate(sc.SimConfig(seed=3), sc.SOURCE_PARAMS, replicate=r)
                               for r in range(6)], seed=0)
print("train cities:", [s.id for s in train], "test cities:", [s.id for s in test])
