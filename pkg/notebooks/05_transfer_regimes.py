"""
Transfer between diseases
=========================

A network and a forest trained on the source disease are applied to a
new disease seen only up to step 25: directly, by retraining the output
layer, by fine-tuning, and by boosting over source and target rows.
"""

import numpy as np

from xferepi import datasets as ds
from xferepi import forest as rf
from xferepi import neural as nn
from xferepi import simcore as sc
from xferepi import transfer as tr

cfg = sc.SimConfig(replicates=10, t_max=300, seed=5)
grid = sc.generate_grid(sc.SOURCE_PARAMS, [0.25], [0.01], cfg)
source, target = grid
window = ds.WindowConfig()
h, cutoff = 2, 25

src_train = ds.build_dataset(source.train, window, h)
tgt_cut = ds.build_dataset(target.train, window, h, cutoff=cutoff)
tgt_full = ds.build_dataset(target.train, window, h)
tgt_test = ds.build_dataset(target.test, window, h)
print(f"source rows {len(src_train)}, target rows before cutoff {len(tgt_cut)}")

train = nn.TrainConfig(epochs=60)
forest = rf.ForestConfig(n_trees=20)
models = [
    tr.fit_baseline(tgt_full, "forest", h, forest_config=forest),
    tr.fit_baseline(tgt_full, "network", h, train_config=train),
    tr.fit_no_transfer(src_train, "forest", h, forest_config=forest),
]
source_net = tr.fit_no_transfer(src_train, "network", h, train_config=train)
moved = tr.transfer_last_layer(source_net, tgt_cut, train, cutoff=cutoff)
models += [source_net, moved, tr.finetune_all(moved, tgt_cut)]
models.append(tr.fit_tradaboost(src_train, tgt_cut, forest,
                                tr.BoostConfig(steps=4, rounds=4, source_rows=1000),
                                horizon=h, cutoff=cutoff))

for m in models:
    mae = np.mean(np.abs(m.predict(tgt_test) - tgt_test.targets))
    seen = m.card()["training"]
    seen = seen.get("target", seen)["diseases"] if "source" in seen else seen["diseases"]
    print(f"{m.tag.label:<16} test MAE {mae:8.3f}   training rows {seen}")
