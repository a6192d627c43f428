"""In-memory study runner shared by the command line and the acceptance suite.

One horizon is the unit of work: every model for every target disease and
cutoff at that horizon is fitted, applied to the target's test cities and
scored.  Horizons are independent and can run in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import transfer as tx
from .config import ExperimentConfig, parse_label
from .datasets import build_dataset
from .evaluate import score, similarity_map
from .rng import derive_seed
from .simcore import SOURCE_LABEL, DiseaseSets, generate_grid

log = logging.getLogger(__name__)

NN_SOURCE_USERS = {"nn_no_transfer", "nn_transfer", "nn_finetuned"}


def simulate_study(cfg: ExperimentConfig) -> list[DiseaseSets]:
    return generate_grid(cfg.source, cfg.target_betas, cfg.target_gammas, cfg.sim)


def study_similarity(grid: list[DiseaseSets]):
    source = _source(grid)
    return similarity_map(source.train,
                          {d.label: d.train for d in grid if d.label != SOURCE_LABEL})


@dataclass
class HorizonResult:
    horizon: int
    records: list = field(default_factory=list)
    exclusions: list = field(default_factory=list)
    cards: list = field(default_factory=list)
    test_hashes: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def _source(grid):
    for d in grid:
        if d.label == SOURCE_LABEL:
            return d
    raise ValueError("study grid has no source disease")


def model_seed(cfg: ExperimentConfig, label: str, disease: str, horizon: int,
               cutoff=None) -> int:
    return derive_seed(cfg.seed, "model", label, disease, horizon,
                       "none" if cutoff is None else cutoff)


def run_horizon(cfg: ExperimentConfig, grid: list[DiseaseSets], horizon: int, *,
                targets=None, cutoffs=None, regimes=None, keep_models: bool = False,
                on_model=None) -> HorizonResult:
    """Fit, apply and score every requested regime at one horizon.

    ``targets``, ``cutoffs`` and ``regimes`` narrow the study (defaults: all
    from ``cfg``).  ``on_model(model, disease)`` is called for every fitted
    model, e.g. to persist it.
    """
    regimes = set(cfg.regimes if regimes is None else regimes)
    for label in regimes:
        parse_label(label)
    cutoffs = cfg.cutoffs.values if cutoffs is None else tuple(cutoffs)
    source = _source(grid)
    target_sets = [d for d in grid if d.label != SOURCE_LABEL
                   and (targets is None or d.label in targets)]
    out = HorizonResult(horizon)
    w = cfg.window

    def publish(model, disease):
        out.cards.append({"disease": disease, **model.card()})
        if keep_models:
            out.models[(model.tag.label, disease, model.tag.cutoff)] = model
        if on_model is not None:
            on_model(model, disease)

    src_train = build_dataset(source.train, w, horizon)
    kw = dict(forest_config=cfg.forest, arch=cfg.arch, train_config=cfg.train)
    src_nn = src_rf = None
    if regimes & NN_SOURCE_USERS:
        src_nn = tx.fit_no_transfer(src_train, "network", horizon,
                                    seed=model_seed(cfg, "nn_no_transfer", SOURCE_LABEL,
                                                    horizon), **kw)
        publish(src_nn, SOURCE_LABEL)
    if "rf_no_transfer" in regimes:
        src_rf = tx.fit_no_transfer(src_train, "forest", horizon,
                                    seed=model_seed(cfg, "rf_no_transfer", SOURCE_LABEL,
                                                    horizon), **kw)
        publish(src_rf, SOURCE_LABEL)

    for tgt in target_sets:
        test = build_dataset(tgt.test, w, horizon)
        out.test_hashes[(tgt.label, horizon)] = test.content_hash()
        totals = {s.id: float(np.sum(s.values)) for s in tgt.test}

        def emit(model, cutoff=None):
            recs, excl = score(model.tag.label, tgt.label, test, model.predict(test), totals,
                               horizon, cutoff)
            out.records.extend(recs)
            out.exclusions.extend(excl)

        if "rf_no_transfer" in regimes:
            emit(src_rf)
        if "nn_no_transfer" in regimes:
            emit(src_nn)
        if regimes & {"rf_baseline", "nn_baseline"}:
            train = build_dataset(tgt.train, w, horizon)
            for label, learner in (("rf_baseline", "forest"), ("nn_baseline", "network")):
                if label in regimes:
                    m = tx.fit_baseline(train, learner, horizon,
                                        seed=model_seed(cfg, label, tgt.label, horizon), **kw)
                    publish(m, tgt.label)
                    emit(m)
        for c in cutoffs:
            if not regimes & set(tx.ALL_LABELS) - {"rf_baseline", "nn_baseline",
                                                   "rf_no_transfer", "nn_no_transfer"}:
                break
            cut = build_dataset(tgt.train, w, horizon, cutoff=c)
            if len(cut) == 0:
                log.warning("%s h=%d cutoff %d: no target rows; skipping", tgt.label,
                            horizon, c)
                continue
            if "rf_tradaboost" in regimes:
                boost = replace(cfg.boost, seed=model_seed(cfg, "rf_tradaboost", tgt.label,
                                                           horizon, c))
                m = tx.fit_tradaboost(src_train, cut, cfg.forest, boost, horizon, c)
                publish(m, tgt.label)
                emit(m, c)
            if regimes & {"nn_transfer", "nn_finetuned"}:
                t = tx.transfer_last_layer(src_nn, cut, cfg.transfer, cutoff=c,
                                           seed=model_seed(cfg, "nn_transfer", tgt.label,
                                                           horizon, c))
                if "nn_transfer" in regimes:
                    publish(t, tgt.label)
                    emit(t, c)
                if "nn_finetuned" in regimes:
                    f = tx.finetune_all(t, cut, cfg.finetune,
                                        seed=model_seed(cfg, "nn_finetuned", tgt.label,
                                                        horizon, c))
                    publish(f, tgt.label)
                    emit(f, c)
    return out
