"""The five modelling regimes.

* ``baseline``     -- trained on target-disease training cities, full period
* ``no_transfer``  -- trained on the source disease only, applied unchanged
* ``tradaboost``   -- instance transfer: boosted forests over source + target rows
* ``nn_transfer``  -- source network with only the output layer retrained
* ``nn_finetuned`` -- ``nn_transfer`` followed by a short low-rate pass over all layers

Networks see features and targets divided by the row's series scale and
their outputs are multiplied back; every prediction is clipped at zero.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import forest as rf
from . import neural as nn
from .datasets import SupervisedDataset
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)

REGIMES = ("baseline", "no_transfer", "tradaboost", "nn_transfer", "nn_finetuned")
LEARNERS = ("forest", "network")
ALLOWED = {
    "baseline": ("forest", "network"),
    "no_transfer": ("forest", "network"),
    "tradaboost": ("forest",),
    "nn_transfer": ("network",),
    "nn_finetuned": ("network",),
}
# regimes that only ever see the first `cutoff` steps of target data
CUTOFF_REGIMES = ("tradaboost", "nn_transfer", "nn_finetuned")

_SHORT = {"forest": "rf", "network": "nn"}


class RegimeError(ValueError):
    pass


def check_pairing(regime: str, learner: str) -> None:
    if regime not in ALLOWED:
        raise RegimeError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if learner not in ALLOWED[regime]:
        raise RegimeError(
            f"regime {regime!r} requires learner {' or '.join(ALLOWED[regime])}, got {learner!r}"
        )


def regime_label(regime: str, learner: str) -> str:
    check_pairing(regime, learner)
    if regime in ("nn_transfer", "nn_finetuned"):
        return regime
    return f"{_SHORT[learner]}_{regime}"


ALL_LABELS = tuple(regime_label(r, l) for r in REGIMES for l in ALLOWED[r])


@dataclass(frozen=True)
class RegimeTag:
    regime: str
    learner: str
    horizon: int
    cutoff: int | None = None

    def __post_init__(self):
        check_pairing(self.regime, self.learner)
        if self.regime in CUTOFF_REGIMES and self.cutoff is None:
            raise RegimeError(f"regime {self.regime!r} needs a cutoff")
        if self.regime not in CUTOFF_REGIMES and self.cutoff is not None:
            raise RegimeError(f"regime {self.regime!r} does not use a cutoff")

    @property
    def label(self) -> str:
        return regime_label(self.regime, self.learner)


def training_audit(*datasets: SupervisedDataset) -> dict:
    """Row counts per disease plus a content hash over all training rows."""
    counts = Counter()
    h = hashlib.sha256()
    for d in datasets:
        counts.update(str(s).split("/", 1)[0] for s in d.series_id)
        h.update(d.content_hash().encode())
    return {"rows": int(sum(counts.values())), "diseases": dict(sorted(counts.items())),
            "sha256": h.hexdigest()}


# --------------------------------------------------------------------------
# boosting


@dataclass(frozen=True)
class BoostConfig:
    steps: int = 10
    rounds: int = 10
    folds: int = 5
    loss: str = "linear"
    variant: str = "two_stage"
    source_rows: int | None = 5000
    n_trees: int | None = 10
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.rounds < 1:
            raise ValueError("steps and rounds must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.loss not in ("linear", "square", "exponential"):
            raise ValueError("loss must be linear, square or exponential")
        if self.variant not in ("two_stage", "classic"):
            raise ValueError("variant must be 'two_stage' or 'classic'")
        if self.source_rows is not None and self.source_rows < 0:
            raise ValueError("source_rows must be >= 0")


def normalized_error(pred, y, loss: str = "linear") -> np.ndarray:
    """|pred - y| scaled by its maximum, then passed through the loss."""
    err = np.abs(np.asarray(pred, dtype=float) - np.asarray(y, dtype=float))
    top = err.max() if err.size else 0.0
    e = err / top if top > 0 else np.zeros_like(err)
    if loss == "square":
        return e * e
    if loss == "exponential":
        return 1.0 - np.exp(-e)
    return e


def decay_source(w_src, e_src, beta: float) -> np.ndarray:
    return np.asarray(w_src, dtype=float) * np.power(beta, e_src)


def solve_beta(w_src, e_src, target_total: float, share: float, tol: float = 1e-15) -> float:
    """Factor beta in [0, 1] such that after ``w_src *= beta**e_src`` the target
    rows hold ``share`` of the total weight.

    The target share is decreasing in beta, so bisection converges; if even
    beta = 0 cannot reach the share (rows with zero error keep their weight),
    0 is returned.
    """
    w_src = np.asarray(w_src, dtype=float)
    if w_src.size == 0:
        return 1.0

    def gap(beta):
        src = decay_source(w_src, e_src, beta).sum()
        return target_total / (target_total + src) - share

    if gap(1.0) >= 0:
        return 1.0
    if gap(0.0) <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def target_share_schedule(n_source: int, n_target: int, step: int, steps: int) -> float:
    """Target weight share required after update ``step`` (1-based)."""
    base = n_target / (n_source + n_target)
    if steps <= 1:
        return base
    return min(1.0, base + step / (steps - 1) * (1.0 - base))


def weighted_median(predictions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted median of ``predictions`` (rounds x rows)."""
    predictions = np.asarray(predictions, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    order = np.argsort(predictions, axis=0, kind="stable")
    cdf = np.cumsum(weights[order], axis=0)
    idx = np.argmax(cdf >= 0.5 * cdf[-1], axis=0)
    cols = np.arange(predictions.shape[1])
    return predictions[order[idx, cols], cols]


def forest_learner(config: rf.ForestConfig):
    def fit(X, y, w, seed):
        return rf.fit_forest(X, y, w, replace(config, seed=seed))
    return fit


@dataclass
class BoostedModel:
    learners: list
    confidences: np.ndarray
    n_source: int = 0
    n_target: int = 0
    source_weight_trace: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    cv_errors: list = field(default_factory=list)
    selected_step: int = 0
    round_errors: list = field(default_factory=list)

    def round_predictions(self, X) -> np.ndarray:
        return np.vstack([m.predict(X) for m in self.learners])

    def predict(self, X) -> np.ndarray:
        return np.maximum(weighted_median(self.round_predictions(X), self.confidences), 0.0)


def _stage2(X, y, w, n_source, learner, config: BoostConfig, seed_base) -> BoostedModel:
    """AdaBoost.R2 rounds that only reweight target rows; source total is held fixed."""
    w = np.asarray(w, dtype=float).copy()
    w /= w.sum()
    learners, conf, errs = [], [], []
    for r in range(config.rounds):
        model = learner(X, y, w, derive_seed(seed_base, "stage2", r))
        e = normalized_error(model.predict(X), y, config.loss)
        eps = float(np.dot(w, e))
        errs.append(eps)
        if eps <= 0:
            learners.append(model)
            conf.append(1.0)
            break
        if eps >= 0.5:
            if not learners:
                learners.append(model)
                conf.append(1.0)
            break
        beta = eps / (1.0 - eps)
        learners.append(model)
        conf.append(math.log(1.0 / beta))
        if r == config.rounds - 1:
            break
        tgt = w[n_source:]
        before = tgt.sum()
        tgt *= np.power(beta, 1.0 - e[n_source:])
        after = tgt.sum()
        if after > 0:
            tgt *= before / after
    return BoostedModel(learners, np.array(conf), round_errors=errs)


def _cv_error(Xs, ys, ws, Xt, yt, wt, groups, learner, folds, seed_base) -> float:
    uniq = np.array(sorted(set(groups)))
    k = min(folds, len(uniq))
    if k < 2:
        return math.inf
    perm = make_rng(seed_base, "cv_groups").permutation(len(uniq))
    fold_of = {g: i % k for i, g in zip(range(len(uniq)), uniq[perm])}
    fold = np.array([fold_of[g] for g in groups])
    target_total = wt.sum()
    errs = []
    for f in range(k):
        tr = fold != f
        te = ~tr
        wt_tr = wt[tr] * (target_total / wt[tr].sum())
        X = np.vstack([Xs, Xt[tr]])
        y = np.concatenate([ys, yt[tr]])
        w = np.concatenate([ws, wt_tr])
        model = learner(X, y, w, derive_seed(seed_base, "cv", f))
        errs.append(float(np.mean((model.predict(Xt[te]) - yt[te]) ** 2)))
    return float(np.mean(errs))


def two_stage_tradaboost(Xs, ys, Xt, yt, groups, learner, config: BoostConfig,
                         seed: int) -> BoostedModel:
    """Two-stage boosting for regression transfer.

    Stage 1 shrinks source weights over ``steps`` steps so the target share
    grows linearly to one; each candidate weighting is scored by grouped
    k-fold CV on the target rows.  Stage 2 runs AdaBoost.R2 rounds from the
    best weighting with the source weights frozen.
    """
    n, m = len(ys), len(yt)
    X = np.vstack([Xs, Xt]) if n else Xt
    y = np.concatenate([ys, yt]) if n else yt
    w = np.full(n + m, 1.0 / (n + m))
    trace = [w[:n].copy()]
    betas, cv_errors, weightings = [], [], []
    for t in range(1, config.steps + 1):
        weightings.append(w.copy())
        if config.steps > 1:
            cv_errors.append(_cv_error(Xs, ys, w[:n], Xt, yt, w[n:], groups, learner,
                                       config.folds, derive_seed(seed, "cv", t)))
        else:
            cv_errors.append(0.0)
        if t == config.steps or n == 0:
            if n == 0:
                break
            continue
        model = learner(X, y, w, derive_seed(seed, "stage1", t))
        e = normalized_error(model.predict(X), y, config.loss)
        share = target_share_schedule(n, m, t, config.steps)
        if share >= 1.0:
            beta = 0.0
            w[:n] = 0.0
        else:
            beta = solve_beta(w[:n], e[:n], w[n:].sum(), share)
            w[:n] = decay_source(w[:n], e[:n], beta)
        betas.append(beta)
        trace.append(w[:n].copy())
    best = int(np.argmin(cv_errors))
    chosen = weightings[best]
    if chosen.sum() <= 0:
        chosen = np.r_[np.zeros(n), np.ones(m)]
    model = _stage2(X, y, chosen, n, learner, config, derive_seed(seed, "stage2"))
    model.n_source, model.n_target = n, m
    model.source_weight_trace = trace
    model.betas = betas
    model.cv_errors = cv_errors
    model.selected_step = best + 1
    return model


def classic_tradaboost(Xs, ys, Xt, yt, learner, config: BoostConfig, seed: int) -> BoostedModel:
    """Multiplicative TrAdaBoost.R2: source rows decay with a fixed factor,
    target rows are boosted by the round's confidence; the prediction is the
    weighted median over the second half of the rounds."""
    n, m = len(ys), len(yt)
    X = np.vstack([Xs, Xt]) if n else Xt
    y = np.concatenate([ys, yt]) if n else yt
    w = np.full(n + m, 1.0 / (n + m))
    rounds = config.rounds
    beta_src = 1.0 / (1.0 + math.sqrt(2.0 * math.log(max(n, 1)) / rounds)) if n else 1.0
    learners, conf, trace = [], [], [w[:n].copy()]
    for r in range(rounds):
        model = learner(X, y, w / w.sum(), derive_seed(seed, "classic", r))
        e = normalized_error(model.predict(X), y, config.loss)
        wt = w[n:]
        eps = float(np.dot(wt, e[n:]) / wt.sum())
        eps = min(max(eps, 1e-10), 0.499)
        beta_t = eps / (1.0 - eps)
        learners.append(model)
        conf.append(math.log(1.0 / beta_t))
        w[:n] *= np.power(beta_src, e[:n])
        w[n:] *= np.power(beta_t, -e[n:])
        w /= w.sum()
        trace.append(w[:n].copy())
    half = rounds // 2
    out = BoostedModel(learners[half:], np.array(conf[half:]), n, m)
    out.source_weight_trace = trace
    out.betas = [beta_src] * rounds
    return out


def fit_tradaboost(source: SupervisedDataset, target: SupervisedDataset,
                   forest_config: rf.ForestConfig = rf.ForestConfig(),
                   config: BoostConfig = BoostConfig(), horizon: int | None = None,
                   cutoff: int = 0, learner=None) -> "ForecastModel":
    """Boosted forest over source rows and the cut-off target rows.

    ``learner(X, y, w, seed)`` may replace the forest (used in tests).
    """
    if len(target) == 0:
        raise ValueError("tradaboost needs at least one target row")
    seed = config.seed
    if config.source_rows is not None and len(source) > config.source_rows:
        keep = np.sort(make_rng(seed, "source_rows").choice(
            len(source), size=config.source_rows, replace=False))
        source = source.take(keep)
    if learner is None:
        fc = forest_config if config.n_trees is None else replace(forest_config,
                                                                 n_trees=config.n_trees)
        learner = forest_learner(fc)
    else:
        fc = forest_config
    try:
        if config.variant == "two_stage":
            model = two_stage_tradaboost(source.features, source.targets, target.features,
                                         target.targets, target.series_id, learner, config,
                                         seed)
        else:
            model = classic_tradaboost(source.features, source.targets, target.features,
                                       target.targets, learner, config, seed)
    except Exception as exc:  # base learner failure
        raise RuntimeError(f"tradaboost base learner failed: {exc}") from exc
    tag = RegimeTag("tradaboost", "forest", horizon if horizon is not None else -1, cutoff)
    return ForecastModel(tag, model, training_audit(source, target), seed,
                         {"forest": asdict(fc), "boost": asdict(config)})


# --------------------------------------------------------------------------
# forecast models


@dataclass
class ForecastModel:
    tag: RegimeTag
    model: object
    audit: dict
    seed: int
    config: dict
    history: nn.TrainLog | None = None

    @property
    def is_network(self) -> bool:
        return isinstance(self.model, nn.NetParams)

    def predict_features(self, features, scale=None) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if self.is_network:
            s = np.ones(len(features)) if scale is None else np.asarray(scale, dtype=float)
            out = nn.forward(self.model, features / s[:, None]) * s
        else:
            out = self.model.predict(features)
        return np.maximum(out, 0.0)

    def predict(self, dataset: SupervisedDataset) -> np.ndarray:
        return self.predict_features(dataset.features, dataset.scale)

    def card(self) -> dict:
        return {"label": self.tag.label, "regime": self.tag.regime, "learner": self.tag.learner,
                "horizon": self.tag.horizon, "cutoff": self.tag.cutoff, "seed": self.seed,
                "config": self.config, "training": self.audit}


def _scaled(data: SupervisedDataset):
    return data.features / data.scale[:, None], data.targets / data.scale


def _fit(data: SupervisedDataset, learner: str, forest_config: rf.ForestConfig,
         arch: nn.NetArchitecture, train_config: nn.TrainConfig, seed: int):
    if learner == "forest":
        cfg = replace(forest_config, seed=derive_seed(seed, "forest"))
        return rf.fit_forest(data.features, data.targets, config=cfg), None, asdict(cfg)
    params = nn.init(arch, derive_seed(seed, "init"))
    tc = replace(train_config, seed=derive_seed(seed, "train"))
    X, y = _scaled(data)
    params, history = nn.train(params, X, y, tc)
    return params, history, {"arch": asdict(arch), "train": asdict(tc)}


def fit_baseline(target_train: SupervisedDataset, learner: str, horizon: int, *,
                 forest_config: rf.ForestConfig = rf.ForestConfig(),
                 arch: nn.NetArchitecture = nn.NetArchitecture(),
                 train_config: nn.TrainConfig = nn.TrainConfig(), seed: int = 0) -> ForecastModel:
    """Aspirational baseline: target training cities over their full period."""
    if len(target_train) == 0:
        raise ValueError("baseline needs target training rows")
    check_pairing("baseline", learner)
    model, history, cfg = _fit(target_train, learner, forest_config, arch, train_config, seed)
    return ForecastModel(RegimeTag("baseline", learner, horizon), model,
                         training_audit(target_train), seed, cfg, history)


def fit_no_transfer(source_train: SupervisedDataset, learner: str, horizon: int, *,
                    forest_config: rf.ForestConfig = rf.ForestConfig(),
                    arch: nn.NetArchitecture = nn.NetArchitecture(),
                    train_config: nn.TrainConfig = nn.TrainConfig(),
                    seed: int = 0) -> ForecastModel:
    """Direct transfer: a model that has only ever seen source rows."""
    if len(source_train) == 0:
        raise ValueError("no-transfer model needs source training rows")
    check_pairing("no_transfer", learner)
    model, history, cfg = _fit(source_train, learner, forest_config, arch, train_config, seed)
    return ForecastModel(RegimeTag("no_transfer", learner, horizon), model,
                         training_audit(source_train), seed, cfg, history)


def transfer_last_layer(source_model: ForecastModel, target_cut: SupervisedDataset,
                        train_config: nn.TrainConfig = nn.TrainConfig(), *, cutoff: int,
                        seed: int = 0) -> ForecastModel:
    """Freeze all hidden layers of the source network and retrain the output layer."""
    if not source_model.is_network:
        raise RegimeError("nn_transfer needs a network source model")
    if len(target_cut) == 0:
        raise ValueError("nn_transfer needs target rows")
    params = source_model.model.freeze_hidden()
    tc = replace(train_config, seed=derive_seed(seed, "transfer"))
    X, y = _scaled(target_cut)
    params, history = nn.train(params, X, y, tc)
    audit = {"source": source_model.audit, "target": training_audit(target_cut)}
    return ForecastModel(RegimeTag("nn_transfer", "network", source_model.tag.horizon, cutoff),
                         params, audit, seed, {**source_model.config, "transfer": asdict(tc)},
                         history)


FINETUNE_CONFIG = nn.TrainConfig(learning_rate=1e-5, epochs=10, early_stopping=None,
                                 lr_decay=1.0)


def finetune_all(transfer_model: ForecastModel, target_cut: SupervisedDataset,
                 train_config: nn.TrainConfig = FINETUNE_CONFIG, *, seed: int = 0) -> ForecastModel:
    """Unfreeze every layer and take a short low-learning-rate pass."""
    if transfer_model.tag.regime != "nn_transfer":
        raise RegimeError("fine-tuning starts from an nn_transfer model")
    start = transfer_model.model.unfreeze()
    tc = replace(train_config, seed=derive_seed(seed, "finetune"))
    X, y = _scaled(target_cut)
    params, history = nn.train(start, X, y, tc)
    if history.diverged:
        log.warning("fine-tuning diverged; keeping the transferred parameters")
        params = start
    tag = RegimeTag("nn_finetuned", "network", transfer_model.tag.horizon,
                    transfer_model.tag.cutoff)
    return ForecastModel(tag, params, transfer_model.audit, seed,
                         {**transfer_model.config, "finetune": asdict(tc)}, history)
