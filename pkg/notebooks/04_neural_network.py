"""
A small feed-forward network
============================

9 -> 64 -> 32 -> 32 -> 1 with ReLU, trained on MSE with early stopping.
Backpropagation is checked against finite differences first.
"""

import numpy as np

from xferepi import neural as nn

arch = nn.NetArchitecture()
params = nn.init(arch, seed=0)
rng = np.random.default_rng(1)
X, y = rng.normal(size=(5, 9)), rng.normal(size=5)

_, grads = nn.grad(params, X, y)
layer, i, j, h = 1, 3, 7, 1e-5
up, down = params.copy(), params.copy()
up.layers[layer].W[i, j] += h
down.layers[layer].W[i, j] -= h
numeric = (nn.loss(up, X, y) - nn.loss(down, X, y)) / (2 * h)
print(f"backprop {grads[layer][0][i, j]:.8f}  finite difference {numeric:.8f}")

# learn a smooth function of the lags
X = rng.uniform(0, 1, size=(3000, 9))
y = X[:, -1] + 0.5 * X[:, -2] ** 2
trained, history = nn.train(params, X, y, nn.TrainConfig(epochs=100, seed=2))
print(f"{len(history.epoch)} epochs, best at {history.best_epoch}, "
      f"validation MSE {min(history.val_mse):.5f}, stopped early: {history.stopped_early}")

# freezing keeps the hidden layers fixed
frozen = trained.freeze_hidden()
retrained, _ = nn.train(frozen, X, 2 * y, nn.TrainConfig(epochs=5))
same = all(np.array_equal(a.W, b.W) for a, b in zip(frozen.layers[:-1], retrained.layers[:-1]))
print("hidden layers unchanged after retraining the output layer:", same)
