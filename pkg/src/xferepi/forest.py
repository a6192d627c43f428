"""Random-forest regression with sample weights, written from scratch.

Trees are grown depth-first on presorted feature orders.  Each tree sees a
weighted bootstrap resample (rows drawn with probability proportional to
their weight), represented as per-row multiplicities so that duplicated rows
never have to be materialised.  Split search is exhaustive over midpoints of
consecutive distinct values on a random feature subset per node and
maximises the reduction in weighted squared error.

Kernels are compiled with numba; fitting releases the GIL so trees can be
grown on a thread pool.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .rng import derive_seed, make_rng

FORMAT_VERSION = 1



@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    max_features: int | None = None  # None -> ceil(sqrt(p))
    min_samples_leaf: int = 1
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    def resolved_max_features(self, n_features: int) -> int:
        if self.max_features is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        if self.max_features > n_features:
            raise ValueError(
                f"max_features={self.max_features} exceeds feature count {n_features}"
            )
        return self.max_features


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        return int(_tree_depth(self.feature, self.left, self.right))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_tree(self.feature, self.threshold, self.left, self.right,
                             self.value, X)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def predict_raw(self, X) -> np.ndarray:
        """Mean of per-tree predictions, without the non-negativity clip."""
        X = _check_arity(X, self.n_features)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.maximum(self.predict_raw(X), 0.0)


def _check_arity(X, n_features: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(
            f"feature arity mismatch: model expects {n_features}, got shape {X.shape}"
        )
    return X


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, inline="always")
def _splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _sample_features(seed, node_id, n_features, k, buf):
    """Fill buf[:k] with a sorted k-subset of range(n_features).

    The draw is keyed on (seed, node_id) only, so it does not depend on the
    order in which nodes are expanded.
    """
    for j in range(n_features):
        buf[j] = j
    state = _splitmix64(np.uint64(seed) ^ _splitmix64(np.uint64(node_id)))
    for j in range(k):
        state = _splitmix64(state)
        r = j + np.int64(state % np.uint64(n_features - j))
        tmp = buf[j]
        buf[j] = buf[r]
        buf[r] = tmp
    for j in range(1, k):
        v = buf[j]
        i = j - 1
        while i >= 0 and buf[i] > v:
            buf[i + 1] = buf[i]
            i -= 1
        buf[i + 1] = v


@numba.njit(cache=True, nogil=True)
def _grow_tree(xs, orders, stats, max_features, min_samples_leaf, max_depth, seed):
    """Grow one tree on m compacted rows.

    ``orders[f]`` lists row ids 0..m-1 sorted by feature f and ``xs[f]`` the
    matching sorted feature values; both are partitioned in place as the
    tree grows.  ``stats[r]`` is (weight, weight * target, sample count).
    """
    p = orders.shape[0]
    m = orders.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    weight = np.zeros(cap)

    goes_left = np.zeros(m, dtype=np.bool_)
    tmp_o = np.empty(m, dtype=orders.dtype)
    tmp_x = np.empty(m)
    fbuf = np.empty(p, dtype=np.int64)

    # stack of (node, start, end, depth)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]

        W = 0.0
        WY = 0.0
        N = 0.0
        row0 = orders[0]
        for i in range(start, end):
            r = row0[i]
            W += stats[r, 0]
            WY += stats[r, 1]
            N += stats[r, 2]
        value[node] = WY / W
        weight[node] = W

        if (max_depth >= 0 and depth >= max_depth) or N < 2 * min_samples_leaf:
            continue

        parent_proxy = WY * WY / W
        best_proxy = parent_proxy
        best_feat = -1
        best_thr = 0.0
        _sample_features(seed, node, p, max_features, fbuf)
        for fi in range(max_features):
            f = fbuf[fi]
            order = orders[f]
            xf = xs[f]
            if xf[start] == xf[end - 1]:
                continue
            wl = 0.0
            wyl = 0.0
            nl = 0.0
            for i in range(start, end - 1):
                r = order[i]
                wl += stats[r, 0]
                wyl += stats[r, 1]
                nl += stats[r, 2]
                xv = xf[i]
                xn = xf[i + 1]
                if xn <= xv:
                    continue
                if nl < min_samples_leaf or N - nl < min_samples_leaf:
                    continue
                wr = W - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                wyr = WY - wyl
                proxy = wyl * wyl / wl + wyr * wyr / wr
                if proxy > best_proxy:
                    best_proxy = proxy
                    best_feat = f
                    thr = 0.5 * (xv + xn)
                    if thr >= xn:
                        thr = xv
                    best_thr = thr

        # require a reduction that is not floating-point noise
        if best_feat < 0 or best_proxy - parent_proxy <= 1e-12 * abs(parent_proxy):
            continue

        order = orders[best_feat]
        xf = xs[best_feat]
        nleft = 0
        for i in range(start, end):
            gl = xf[i] <= best_thr
            goes_left[order[i]] = gl
            if gl:
                nleft += 1
        for f in range(p):
            o = orders[f]
            xv = xs[f]
            a = start
            b = 0
            for i in range(start, end):
                r = o[i]
                if goes_left[r]:
                    o[a] = r
                    xv[a] = xv[i]
                    a += 1
                else:
                    tmp_o[b] = r
                    tmp_x[b] = xv[i]
                    b += 1
            for i in range(b):
                o[a + i] = tmp_o[i]
                xv[a + i] = tmp_x[i]

        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        left[node] = lnode
        right[node] = rnode

        st_node[sp] = rnode
        st_start[sp] = start + nleft
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lnode
        st_start[sp] = start
        st_end[sp] = start + nleft
        st_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), weight[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@numba.njit(cache=True)
def _tree_depth(feature, left, right):
    depth = np.zeros(len(feature), dtype=np.int64)
    best = 0
    for node in range(len(feature)):
        if feature[node] >= 0:
            depth[left[node]] = depth[node] + 1
            depth[right[node]] = depth[node] + 1
        if depth[node] > best:
            best = depth[node]
    return best


# --------------------------------------------------------------------------


def _bootstrap_counts(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    p = weights / weights.sum()
    return rng.multinomial(n, p).astype(np.float64)


def fit_tree(X, y, weights=None, *, max_features=None, min_samples_leaf=1,
             max_depth=None, seed=0) -> Tree:
    """Grow a single tree on all rows with the given weights (no resampling)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    if not np.any(w > 0):
        raise ValueError("total sample weight must be positive")
    k = X.shape[1] if max_features is None else max_features
    return _grow(np.ascontiguousarray(X.T), _presort(X), y, w, (w > 0).astype(float),
                 k, min_samples_leaf, -1 if max_depth is None else max_depth, seed)


def _presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(
        np.argsort(X, axis=0, kind="stable").T.astype(np.int32)
    )


def _grow(Xt, orders_all, y, w, cnt, k, min_samples_leaf, max_depth, seed) -> Tree:
    """Compact the rows with positive weight and grow a tree on them."""
    mask = w > 0
    active = np.flatnonzero(mask)
    remap = np.full(len(w), -1, dtype=np.int32)
    remap[active] = np.arange(len(active), dtype=np.int32)
    keep = mask[orders_all[0]]
    if keep.all():
        orders = remap[orders_all]
    else:
        orders = np.stack([remap[o[mask[o]]] for o in orders_all])
    orders = np.ascontiguousarray(orders)
    xs = np.ascontiguousarray(np.take_along_axis(Xt[:, active], orders, axis=1))
    stats = np.ascontiguousarray(
        np.column_stack([w[active], w[active] * y[active], cnt[active]]))
    return Tree(*_grow_tree(xs, orders, stats, k, min_samples_leaf, max_depth,
                            np.uint64(seed)))


def fit_forest(X, y, weights=None, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Fit ``config.n_trees`` trees, each on a weighted bootstrap resample.

    Sample weights enter only through the resampling probabilities when
    ``bootstrap`` is on; otherwise every tree is grown on all rows using the
    weights directly.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] == 0:
        raise ValueError("cannot fit a forest on zero rows")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, non-negative and match y")
    if w.sum() <= 0:
        raise ValueError("total sample weight must be positive")

    p = X.shape[1]
    k = config.resolved_max_features(p)
    depth = -1 if config.max_depth is None else config.max_depth
    orders_all = _presort(X)
    Xt = np.ascontiguousarray(X.T)

    def grow(t: int) -> Tree:
        tree_seed = derive_seed(config.seed, "tree", t)
        if config.bootstrap:
            counts = _bootstrap_counts(w, make_rng(tree_seed, "bootstrap"))
            return _grow(Xt, orders_all, y, counts, counts, k, config.min_samples_leaf,
                         depth, tree_seed)
        return _grow(Xt, orders_all, y, w, (w > 0).astype(np.float64), k,
                     config.min_samples_leaf, depth, tree_seed)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            trees = tuple(pool.map(grow, range(config.n_trees)))
    else:
        trees = tuple(grow(t) for t in range(config.n_trees))
    return ForestModel(trees=trees, n_features=p, config=config)


def predict(model: ForestModel, X) -> np.ndarray:
    return model.predict(X)


# --------------------------------------------------------------------------
# persistence


def save_forest(model: ForestModel, path) -> None:
    """Write all nodes to an ``.npz`` archive with fixed little-endian dtypes."""
    sizes = np.array([t.n_nodes for t in model.trees], dtype="<i8")

    def cat(attr, dtype):
        return np.concatenate([getattr(t, attr) for t in model.trees]).astype(dtype)

    cfg = model.config
    np.savez(
        path,
        version=np.array(FORMAT_VERSION, dtype="<i8"),
        n_features=np.array(model.n_features, dtype="<i8"),
        sizes=sizes,
        feature=cat("feature", "<i4"),
        threshold=cat("threshold", "<f8"),
        left=cat("left", "<i4"),
        right=cat("right", "<i4"),
        value=cat("value", "<f8"),
        weight=cat("weight", "<f8"),
        config=np.array([
            cfg.n_trees,
            -1 if cfg.max_features is None else cfg.max_features,
            cfg.min_samples_leaf,
            -1 if cfg.max_depth is None else cfg.max_depth,
            int(cfg.bootstrap),
            cfg.seed,
        ], dtype="<u8" if cfg.seed >= 2**63 else "<i8"),
    )


def load_forest(path) -> ForestModel:
    with np.load(path) as z:
        version = int(z["version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {version}")
        sizes = z["sizes"]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        arrays = {k: z[k] for k in ("feature", "threshold", "left", "right", "value", "weight")}
        c = [int(v) for v in z["config"]]
        n_features = int(z["n_features"])
    trees = tuple(
        Tree(**{k: np.ascontiguousarray(a[bounds[i]:bounds[i + 1]]).astype(
            np.int32 if a.dtype.kind == "i" else np.float64) for k, a in arrays.items()})
        for i in range(len(sizes))
    )
    config = ForestConfig(
        n_trees=c[0],
        max_features=None if c[1] < 0 else c[1],
        min_samples_leaf=c[2],
        max_depth=None if c[3] < 0 else c[3],
        bootstrap=bool(c[4]),
        seed=c[5],
    )
    return ForestModel(trees=trees, n_features=n_features, config=config)


def forest_bytes(model: ForestModel) -> bytes:
    buf = io.BytesIO()
    save_forest(model, buf)
    return buf.getvalue()
