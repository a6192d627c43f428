"""Experiment configuration: YAML schema, validation and conversion.

A config file has these top-level sections (all optional except
``version``; missing keys take the defaults shown in ``configs/default.yaml``)::

    version, seed, output, simulation, datasets, forest, network, transfer,
    boosting, regimes, outputs

Validation never raises on bad input; it returns a list of
:class:`Diagnostic` objects naming the offending field path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .datasets import CutoffSpec, WindowConfig
from .forest import ForestConfig
from .neural import EarlyStopping, NetArchitecture, TrainConfig
from .simcore import SOURCE_PARAMS, TARGET_BETAS, TARGET_GAMMAS, SimConfig, SirdParams
from .transfer import ALL_LABELS, BoostConfig, RegimeError, check_pairing

SCHEMA_VERSION = 1

# section -> {key: (allowed types, default)}
_NUM = (int, float)
SCHEMA = {
    "simulation": {
        "population_n": (int, 10_000),
        "initial_infected": (int, 10),
        "t_max": (int, 1000),
        "replicates": (int, 100),
        "convention": (str, "hazard"),
        "kind": (str, "incidence"),
        "source": (dict, asdict(SOURCE_PARAMS)),
        "target_betas": (list, list(TARGET_BETAS)),
        "target_gammas": (list, list(TARGET_GAMMAS)),
    },
    "datasets": {
        "lags": (int, 9),
        "horizons": (list, list(range(2, 10))),
        "cutoffs": (list, [25, 30, 35, 100]),
        "scaling": (str, "window"),
    },
    "forest": {
        "n_trees": (int, 50),
        "max_features": ((int, type(None)), None),
        "min_samples_leaf": (int, 1),
        "max_depth": ((int, type(None)), None),
        "bootstrap": (bool, True),
    },
    "network": {
        "hidden": (list, [64, 32, 32]),
        "activation": (str, "relu"),
        "learning_rate": (_NUM, 1e-3),
        "epochs": (int, 500),
        "batch_size": (int, 256),
        "patience": (int, 20),
        "validation_fraction": (_NUM, 0.1),
        "lr_decay": (_NUM, 0.97),
        "optimizer": (str, "adam"),
    },
    "transfer": {
        "learning_rate": (_NUM, 1e-3),
        "epochs": (int, 500),
        "finetune_learning_rate": (_NUM, 1e-5),
        "finetune_epochs": (int, 10),
    },
    "boosting": {
        "steps": (int, 10),
        "rounds": (int, 10),
        "folds": (int, 5),
        "loss": (str, "linear"),
        "variant": (str, "two_stage"),
        "source_rows": ((int, type(None)), 5000),
        "n_trees": ((int, type(None)), 10),
    },
    "outputs": {
        "series_csv": (bool, True),
        "dataset_csv": (bool, False),
        "save_forests": (bool, False),
        "save_networks": (bool, True),
    },
}
TOP_LEVEL = {"version", "seed", "output", "regimes", *SCHEMA}
DEFAULT_OUTPUT = "runs/default"


class ConfigError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def parse_label(label: str) -> tuple[str, str]:
    """``rf_baseline`` -> (baseline, forest); ``nn_transfer`` -> (nn_transfer, network)."""
    if label in ("nn_transfer", "nn_finetuned"):
        return label, "network"
    prefix, _, regime = label.partition("_")
    learner = {"rf": "forest", "nn": "network"}.get(prefix)
    if learner is None or not regime:
        raise RegimeError(f"unknown regime label {label!r}; expected one of {ALL_LABELS}")
    check_pairing(regime, learner)
    return regime, learner


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    source: SirdParams = SOURCE_PARAMS
    target_betas: tuple = TARGET_BETAS
    target_gammas: tuple = TARGET_GAMMAS
    window: WindowConfig = field(default_factory=WindowConfig)
    cutoffs: CutoffSpec = field(default_factory=CutoffSpec)
    forest: ForestConfig = field(default_factory=ForestConfig)
    arch: NetArchitecture = field(default_factory=NetArchitecture)
    train: TrainConfig = field(default_factory=TrainConfig)
    transfer: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=1e-5, epochs=10, early_stopping=None, lr_decay=1.0))
    boost: BoostConfig = field(default_factory=BoostConfig)
    regimes: tuple = ALL_LABELS
    outputs: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA["outputs"].items()})
    output: str = DEFAULT_OUTPUT
    raw: dict = field(default_factory=dict, compare=False)

    def section_hash(self, *sections) -> str:
        """Content hash of the given raw config sections (plus the master seed)."""
        blob = {"seed": self.seed, **{s: self.raw.get(s) for s in sections}}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


def _merged(raw: dict) -> dict:
    out = {"version": raw.get("version", SCHEMA_VERSION), "seed": raw.get("seed", 0),
           "output": raw.get("output", DEFAULT_OUTPUT)}
    for section, keys in SCHEMA.items():
        given = raw.get(section) or {}
        out[section] = {k: given.get(k, default) for k, (_, default) in keys.items()}
    out["regimes"] = list(raw.get("regimes", ALL_LABELS))
    return out


def _structural(raw) -> list[Diagnostic]:
    diags = []
    if not isinstance(raw, dict):
        return [Diagnostic("<root>", "config must be a mapping")]
    for key in raw:
        if key not in TOP_LEVEL:
            diags.append(Diagnostic(str(key), "unknown top-level key"))
    if raw.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        diags.append(Diagnostic("version", f"unsupported schema version; expected "
                                           f"{SCHEMA_VERSION}"))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        diags.append(Diagnostic("seed", "must be a non-negative integer"))
    if not isinstance(raw.get("output", DEFAULT_OUTPUT), str):
        diags.append(Diagnostic("output", "must be a directory path string"))
    for section, keys in SCHEMA.items():
        given = raw.get(section)
        if given is None:
            continue
        if not isinstance(given, dict):
            diags.append(Diagnostic(section, "must be a mapping"))
            continue
        for k, v in given.items():
            path = f"{section}.{k}"
            if k not in keys:
                diags.append(Diagnostic(path, "unknown key"))
                continue
            types = keys[k][0]
            types = types if isinstance(types, tuple) else (types,)
            if isinstance(v, bool) and bool not in types:
                diags.append(Diagnostic(path, f"expected {_names(types)}, got bool"))
            elif not isinstance(v, types):
                diags.append(Diagnostic(path, f"expected {_names(types)}, "
                                              f"got {type(v).__name__}"))
    regimes = raw.get("regimes", ALL_LABELS)
    if not isinstance(regimes, (list, tuple)) or not regimes:
        diags.append(Diagnostic("regimes", "must be a non-empty list of regime labels"))
    return diags


def _names(types):
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def _build(cfg: dict, diags: list) -> ExperimentConfig | None:
    def attempt(path, fn):
        try:
            return fn()
        except (ValueError, TypeError, RegimeError) as exc:
            diags.append(Diagnostic(path, str(exc)))
            return None

    sim_raw = cfg["simulation"]
    src = sim_raw["source"]
    source = attempt("simulation.source", lambda: SirdParams(
        **{k: float(src[k]) for k in ("beta", "gamma", "zeta", "mu")}))
    sim = attempt("simulation", lambda: SimConfig(
        population_n=sim_raw["population_n"], initial_infected=sim_raw["initial_infected"],
        t_max=sim_raw["t_max"], replicates=sim_raw["replicates"], seed=cfg["seed"],
        convention=sim_raw["convention"], kind=sim_raw["kind"]))
    if sim is not None and sim.initial_infected < 1:
        diags.append(Diagnostic("simulation.initial_infected", "must be >= 1"))
    grids = {}
    for key in ("target_betas", "target_gammas"):
        vals = sim_raw[key]
        if not vals or not all(isinstance(v, _NUM) and not isinstance(v, bool) for v in vals):
            diags.append(Diagnostic(f"simulation.{key}", "must be a non-empty list of numbers"))
        else:
            grids[key] = tuple(float(v) for v in vals)
    if source is not None and len(grids) == 2:
        for b in grids["target_betas"]:
            for g in grids["target_gammas"]:
                attempt(f"simulation.target ({b:g}, {g:g})", lambda: replace(source, beta=b,
                                                                             gamma=g))

    ds = cfg["datasets"]
    window = attempt("datasets", lambda: WindowConfig(
        lags=ds["lags"], horizons=tuple(ds["horizons"]), scaling=ds["scaling"]))
    cutoffs = attempt("datasets.cutoffs", lambda: CutoffSpec(tuple(ds["cutoffs"])))
    if window is not None and cutoffs is not None:
        attempt("datasets.cutoffs", lambda: cutoffs.check(window))
    if window is not None and sim is not None and sim.t_max < window.first_target + 1:
        diags.append(Diagnostic("simulation.t_max", f"series of length {sim.t_max} yield no "
                                                    f"rows (first target index "
                                                    f"{window.first_target})"))

    fr = cfg["forest"]
    forest = attempt("forest", lambda: ForestConfig(
        n_trees=fr["n_trees"], max_features=fr["max_features"],
        min_samples_leaf=fr["min_samples_leaf"], max_depth=fr["max_depth"],
        bootstrap=fr["bootstrap"], seed=cfg["seed"]))
    if forest is not None and window is not None and forest.max_features is not None \
            and forest.max_features > window.lags:
        diags.append(Diagnostic("forest.max_features", f"exceeds the number of features "
                                                      f"({window.lags})"))

    net = cfg["network"]
    arch = attempt("network", lambda: NetArchitecture(
        n_inputs=window.lags if window else 9, hidden=tuple(net["hidden"]),
        activation=net["activation"]))
    stopping = attempt("network", lambda: EarlyStopping(net["patience"],
                                                        float(net["validation_fraction"])))
    train = attempt("network", lambda: TrainConfig(
        learning_rate=float(net["learning_rate"]), epochs=net["epochs"],
        batch_size=net["batch_size"], early_stopping=stopping,
        lr_decay=float(net["lr_decay"]), optimizer=net["optimizer"]))
    if train is not None and train.learning_rate <= 0:
        diags.append(Diagnostic("network.learning_rate", "must be > 0"))
    tr = cfg["transfer"]
    transfer = attempt("transfer", lambda: replace(
        train, learning_rate=float(tr["learning_rate"]), epochs=tr["epochs"])) \
        if train is not None else None
    finetune = attempt("transfer", lambda: replace(
        train, learning_rate=float(tr["finetune_learning_rate"]), epochs=tr["finetune_epochs"],
        early_stopping=None, lr_decay=1.0)) if train is not None else None

    bo = cfg["boosting"]
    boost = attempt("boosting", lambda: BoostConfig(seed=cfg["seed"], **bo))
    if boost is not None and boost.n_trees is not None and boost.n_trees < 1:
        diags.append(Diagnostic("boosting.n_trees", "must be >= 1"))

    labels = []
    for i, label in enumerate(cfg["regimes"]):
        if attempt(f"regimes[{i}]", lambda: parse_label(str(label))) is not None:
            labels.append(str(label))
    if len(set(labels)) != len(labels):
        diags.append(Diagnostic("regimes", "duplicate regime labels"))

    if diags:
        return None
    return ExperimentConfig(
        seed=cfg["seed"], sim=sim, source=source, target_betas=grids["target_betas"],
        target_gammas=grids["target_gammas"], window=window, cutoffs=cutoffs, forest=forest,
        arch=arch, train=train, transfer=transfer, finetune=finetune, boost=boost,
        regimes=tuple(labels), outputs=dict(cfg["outputs"]), output=cfg["output"], raw=cfg)


def read_yaml(path) -> tuple[object, list[Diagnostic]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return None, [Diagnostic(str(path), f"cannot read file: {exc.strerror}")]
    try:
        return yaml.safe_load(text) or {}, []
    except yaml.YAMLError as exc:
        return None, [Diagnostic(str(path), f"YAML syntax error: {exc}")]


def _without(raw: dict, diags) -> dict:
    """Copy of ``raw`` with every key named by a diagnostic removed."""
    bad = {d.path for d in diags}
    out = {}
    for key, value in raw.items():
        if key in bad:
            continue
        if isinstance(value, dict):
            value = {k: v for k, v in value.items() if f"{key}.{k}" not in bad}
        out[key] = value
    return out


def check(raw) -> tuple[ExperimentConfig | None, list[Diagnostic]]:
    diags = _structural(raw)
    if not isinstance(raw, dict):
        return None, diags
    more = []
    cfg = _build(_merged(_without(raw, diags)), more)
    diags += more
    return (None if diags else cfg), diags


def validate_config(path) -> list[Diagnostic]:
    """All problems with the config file at ``path``; empty if it is valid."""
    raw, diags = read_yaml(path)
    if diags:
        return diags
    return check(raw)[1]


def load_config(path) -> ExperimentConfig:
    raw, diags = read_yaml(path)
    if not diags:
        cfg, diags = check(raw)
    if diags:
        raise ConfigError(diags)
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    cfg, diags = check(raw)
    if diags:
        raise ConfigError(diags)
    return cfg
