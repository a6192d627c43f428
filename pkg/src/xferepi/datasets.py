"""Windowed supervised datasets built from epidemic series.

A row predicts the case count at target index ``tau`` from the ``lags``
observations ending ``horizon`` steps earlier.  Target indices start at
``lags - 1 + max_horizon`` for every horizon, so all horizons are scored on
the same targets.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng
from .simcore import EpidemicSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    lags: int = 9
    horizons: tuple[int, ...] = tuple(range(2, 10))
    max_horizon: int | None = None
    scaling: str = "window"

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(sorted(set(self.horizons))))
        if self.scaling not in ("window", "series"):
            raise ValueError("scaling must be 'window' or 'series'")
        if self.lags < 1:
            raise ValueError("lags must be >= 1")
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be a non-empty set of integers >= 1")
        if self.max_horizon is None:
            object.__setattr__(self, "max_horizon", max(self.horizons))
        if self.max_horizon < max(self.horizons):
            raise ValueError("max_horizon must be >= every horizon")

    @property
    def first_target(self) -> int:
        """Earliest target index shared by all horizons."""
        return self.lags - 1 + self.max_horizon


@dataclass(frozen=True)
class CutoffSpec:
    values: tuple[int, ...] = (25, 30, 35, 100)
    mode: str = "time-step"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("cutoffs must be strictly increasing")
        if self.mode not in ("time-step", "calendar-week"):
            raise ValueError("mode must be 'time-step' or 'calendar-week'")

    def check(self, window: WindowConfig) -> None:
        floor = window.first_target
        bad = [c for c in self.values if c <= floor]
        if bad:
            raise ValueError(f"cutoffs {bad} leave no training rows: they must exceed the "
                             f"aligned first target index {floor}")


@dataclass(frozen=True)
class SupervisedDataset:
    """Feature rows (oldest lag first), targets and per-row provenance.

    ``scale`` holds the per-row normalisation constant used by the network,
    floored at 1: the maximum of the row's own lags (``"window"`` scaling) or
    of its series over the visible period (``"series"``).
    """

    features: np.ndarray
    targets: np.ndarray
    series_id: np.ndarray
    target_t: np.ndarray
    horizon: np.ndarray
    scale: np.ndarray = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = len(self.targets)
        if self.scale is None:
            object.__setattr__(self, "scale", np.ones(n))
        for name in ("series_id", "target_t", "horizon", "scale"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if self.features.shape[0] != n:
            raise ValueError("features and targets disagree on row count")

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_lags(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "SupervisedDataset":
        return SupervisedDataset(self.features[idx], self.targets[idx], self.series_id[idx],
                                 self.target_t[idx], self.horizon[idx], self.scale[idx],
                                 self.warnings)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.targets, self.target_t, self.horizon):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update("\n".join(map(str, self.series_id)).encode())
        return h.hexdigest()


def empty_dataset(lags: int, warnings=()) -> SupervisedDataset:
    return SupervisedDataset(np.zeros((0, lags)), np.zeros(0), np.array([], dtype=object),
                             np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                             np.ones(0), tuple(warnings))


def concat(datasets, lags: int | None = None) -> SupervisedDataset:
    datasets = [d for d in datasets if len(d)]
    if not datasets:
        return empty_dataset(lags or 9)
    return SupervisedDataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.targets for d in datasets]),
        np.concatenate([d.series_id for d in datasets]),
        np.concatenate([d.target_t for d in datasets]),
        np.concatenate([d.horizon for d in datasets]),
        np.concatenate([d.scale for d in datasets]),
        tuple(w for d in datasets for w in d.warnings),
    )


def make_windows(series: EpidemicSeries, config: WindowConfig, horizon: int,
                 scale_until: int | None = None) -> SupervisedDataset:
    """Lagged feature rows for one series and one horizon.

    Row for target index ``tau`` holds ``values[tau-horizon-lags+1 : tau-horizon+1]``.
    Under ``"series"`` scaling, ``scale_until`` bounds the period whose
    maximum becomes the row scale (default: the whole series).
    """
    if horizon not in config.horizons and horizon > config.max_horizon:
        raise ValueError(f"horizon {horizon} exceeds max_horizon {config.max_horizon}")
    values = np.asarray(series.values, dtype=np.float64)
    n = len(values)
    first = config.first_target
    if n < config.lags + config.max_horizon:
        msg = f"series {series.id} too short ({n} < {config.lags + config.max_horizon})"
        log.warning(msg)
        return empty_dataset(config.lags, [msg])
    taus = np.arange(first, n)
    starts = taus - horizon - config.lags + 1
    features = np.lib.stride_tricks.sliding_window_view(values, config.lags)[starts]
    m = len(taus)
    if config.scaling == "window":
        scale = np.maximum(features.max(axis=1), 1.0)
    else:
        visible = values[:scale_until] if scale_until is not None else values
        scale = np.full(m, max(float(visible.max()) if visible.size else 1.0, 1.0))
    return SupervisedDataset(
        features=np.ascontiguousarray(features),
        targets=values[taus].copy(),
        series_id=np.full(m, series.id, dtype=object),
        target_t=taus.astype(np.int64),
        horizon=np.full(m, horizon, dtype=np.int64),
        scale=scale,
    )


def align_warmup(datasets: dict[int, SupervisedDataset]) -> dict[int, SupervisedDataset]:
    """Restrict each horizon's dataset to the (series, target) pairs present in all."""
    if len(datasets) <= 1:
        return dict(datasets)
    keysets = [set(zip(d.series_id, d.target_t)) for d in datasets.values()]
    common = set.intersection(*keysets)
    out = {}
    for h, d in datasets.items():
        keep = np.fromiter(((s, t) in common for s, t in zip(d.series_id, d.target_t)),
                           dtype=bool, count=len(d))
        out[h] = d if keep.all() else d.take(keep)
    return out


def apply_cutoff(dataset: SupervisedDataset, cutoff: int) -> SupervisedDataset:
    """Keep rows whose target index is strictly before ``cutoff``."""
    return dataset.take(dataset.target_t < cutoff)


def build_dataset(series_list, config: WindowConfig, horizon: int,
                  cutoff: int | None = None) -> SupervisedDataset:
    """Windows for many series at one horizon, optionally cut off.

    With a cutoff and ``"series"`` scaling, the scale only looks at
    observations before the cutoff.
    """
    parts = []
    for s in series_list:
        d = make_windows(s, config, horizon, scale_until=cutoff)
        if cutoff is not None:
            d = apply_cutoff(d, cutoff)
        parts.append(d)
    return concat(parts, config.lags)


def split_cities(series_list, fraction: float = 0.5, seed: int = 0):
    """Random disjoint partition into (train, test); deterministic per seed."""
    series_list = list(series_list)
    if len(series_list) < 2:
        raise ValueError("need at least two series to split")
    n = len(series_list)
    n_train = int(math.floor(n * fraction + 0.5)) if fraction != 0.5 else (n + 1) // 2
    n_train = min(max(n_train, 1), n - 1)
    perm = make_rng(seed, "split_cities").permutation(n)
    train_idx = sorted(perm[:n_train])
    test_idx = sorted(perm[n_train:])
    return [series_list[i] for i in train_idx], [series_list[i] for i in test_idx]


# --------------------------------------------------------------------------
# empirical CSV ingestion


class IngestError(ValueError):
    pass


SCHEMAS = {("city", "week", "cases"): "week", ("city", "date", "cases"): "date"}


def ingest_csv(path, disease: str = "empirical", fill: str = "zero",
               weekly: bool = True) -> list[EpidemicSeries]:
    """Read ``city,week,cases`` (integer week index) or ``city,date,cases``
    (ISO daily dates) into one series per city.

    Missing time points are zero-filled, or linearly interpolated with
    ``fill="interpolate"``.  Daily files are summed into 7-day weeks anchored
    at each city's first date unless ``weekly`` is False.
    """
    if fill not in ("zero", "interpolate"):
        raise ValueError("fill must be 'zero' or 'interpolate'")
    path = Path(path)
    records: dict[str, dict[int, float]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file (no header)")
        header = tuple(h.strip() for h in header)
        if header not in SCHEMAS:
            raise IngestError(f"{path}:1: header {header} matches no known schema "
                              f"{[','.join(k) for k in SCHEMAS]}")
        time_kind = SCHEMAS[header]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            city, when, cases = (c.strip() for c in row)
            if not city:
                raise IngestError(f"{path}:{lineno}: empty city")
            try:
                if time_kind == "week":
                    t = int(when)
                else:
                    t = dt.date.fromisoformat(when).toordinal()
                value = float(cases)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if not math.isfinite(value) or value < 0:
                raise IngestError(f"{path}:{lineno}: case count must be a non-negative number")
            by_t = records.setdefault(city, {})
            if t in by_t:
                raise IngestError(f"{path}:{lineno}: duplicate time point for city {city}")
            by_t[t] = value

    out = []
    for city in sorted(records):
        by_t = records[city]
        t0, t1 = min(by_t), max(by_t)
        grid = np.arange(t0, t1 + 1)
        known = np.array(sorted(by_t))
        vals = np.array([by_t[t] for t in known])
        if fill == "zero":
            values = np.zeros(len(grid))
            values[known - t0] = vals
        else:
            values = np.interp(grid, known, vals)
        series = EpidemicSeries(disease=disease, replicate=city, values=values)
        if time_kind == "date" and weekly:
            series = daily_to_weekly(series)
        out.append(series)
    return out


def daily_to_weekly(series: EpidemicSeries) -> EpidemicSeries:
    """Sum non-overlapping 7-day blocks from the first day; drop a partial tail."""
    v = np.asarray(series.values)
    n_weeks = len(v) // 7
    weekly = v[: n_weeks * 7].reshape(n_weeks, 7).sum(axis=1)
    return EpidemicSeries(series.disease, series.replicate, weekly, series.kind)


# --------------------------------------------------------------------------
# audit export


def dataset_rows(dataset: SupervisedDataset):
    """Rows sorted by (series id, target index, horizon)."""
    order = sorted(range(len(dataset)),
                   key=lambda k: (str(dataset.series_id[k]), int(dataset.target_t[k]),
                                  int(dataset.horizon[k])))
    for k in order:
        yield (dataset.series_id[k], int(dataset.target_t[k]), int(dataset.horizon[k]),
               *(_fmt(x) for x in dataset.features[k]), _fmt(dataset.targets[k]))


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_dataset_csv(datasets, path) -> None:
    datasets = list(datasets)
    lags = datasets[0].n_lags if datasets else 9
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "target_t", "horizon",
                    *[f"lag_{k}" for k in range(1, lags + 1)], "target"])
        for d in datasets:
            w.writerows(dataset_rows(d))
