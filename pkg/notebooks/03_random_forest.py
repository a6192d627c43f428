"""
Random forest regression
========================

Weighted bootstrap, random feature subsets and exact midpoint splits.
"""

import numpy as np

from xferepi import forest as rf

rng = np.random.default_rng(0)
X = rng.uniform(0, 10, size=(500, 3))
y = np.sin(X[:, 0]) + 0.1 * X[:, 1] + rng.normal(scale=0.1, size=500)

model = rf.fit_forest(X[:400], y[:400], config=rf.ForestConfig(n_trees=50, seed=1))
pred = model.predict_raw(X[400:])
print("held-out MSE:", np.mean((pred - y[400:]) ** 2))
print("variance of y:", y[400:].var())

# a single stump finds the obvious step
x = np.array([[0.0], [1.0], [2.0], [3.0]])
stump = rf.fit_tree(x, np.array([0.0, 0.0, 5.0, 5.0]), max_depth=1)
print("stump threshold:", stump.threshold[0])

# sample weights act like duplicated rows
w = np.ones(400)
w[:200] = 0.0
half = rf.fit_forest(X[:400], y[:400], w, rf.ForestConfig(n_trees=20, seed=1))
print("forest trained on the second half only, MSE:",
      np.mean((half.predict_raw(X[400:]) - y[400:]) ** 2))
