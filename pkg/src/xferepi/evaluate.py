"""Error metrics, best-model counts, similarity maps and the report bundle.

All CSV text produced here is a pure function of its inputs: rows are sorted
and floats formatted with a fixed number of significant digits.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .simcore import parse_target_label

log = logging.getLogger(__name__)

ERRORS_HEADER = "regime,disease,city,horizon,cutoff,mae,pmae"
BEST_HEADER = "horizon,cutoff,regime,count,ties"
SIMILARITY_HEADER = "beta,gamma,median_corr,pairs_used"


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def _cutoff_key(c):
    return -1 if c is None else c


@dataclass(frozen=True)
class EvalRecord:
    regime: str
    disease: str
    city: str
    horizon: int
    cutoff: int | None
    mae: float
    pmae: float

    def __post_init__(self):
        if not (self.mae >= 0 and np.isfinite(self.mae)):
            raise ValueError(f"mae must be finite and >= 0, got {self.mae}")
        if not (self.pmae >= 0 and np.isfinite(self.pmae)):
            raise ValueError(f"pmae must be finite and >= 0, got {self.pmae}")

    def sort_key(self):
        return (self.regime, self.disease, self.city, self.horizon, _cutoff_key(self.cutoff))

    def csv_row(self) -> str:
        return ",".join([self.regime, self.disease, self.city, str(self.horizon),
                         fmt(self.cutoff), fmt(self.mae), fmt(self.pmae)])


def percent_mae(predictions, truths, total_cases: float) -> float:
    """Mean absolute error divided by the city's total case count."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and truths must be non-empty and equal length")
    if not total_cases > 0:
        raise ValueError("total_cases must be > 0")
    return float(np.mean(np.abs(p - t)) / total_cases)


@dataclass(frozen=True)
class Exclusion:
    disease: str
    city: str
    reason: str


def score(regime: str, disease: str, dataset, predictions, totals: dict,
          horizon: int, cutoff: int | None):
    """Per-city error records for one model's predictions on a test dataset.

    ``totals`` maps series id to the city's total cases over the full series.
    Returns (records, exclusions).
    """
    predictions = np.asarray(predictions, dtype=float)
    if len(predictions) != len(dataset):
        raise ValueError("one prediction per dataset row required")
    records, excluded = [], []
    ids = np.asarray(dataset.series_id)
    for sid in sorted(set(ids.tolist())):
        rows = ids == sid
        city = sid.split("/", 1)[-1]
        total = float(totals[sid])
        err = np.abs(predictions[rows] - dataset.targets[rows])
        if total <= 0:
            excluded.append(Exclusion(disease, city, "zero total cases"))
            continue
        mae = float(err.mean())
        records.append(EvalRecord(regime, disease, city, horizon, cutoff, mae, mae / total))
    if excluded:
        log.warning("%s/%s h=%d: %d cities excluded (zero total cases)", regime, disease,
                    horizon, len(excluded))
    return records, excluded


# --------------------------------------------------------------------------
# best-model counts


@dataclass(frozen=True)
class Frequency:
    horizon: int
    cutoff: int | None
    regime: str
    count: int
    ties: int
    disease: str | None = None


def best_model_frequency(records, regimes=None, by_disease: bool = False):
    """Count, per (horizon, cutoff), how often each regime has the lowest pmae.

    A cell is one (disease, city, horizon, cutoff).  Records without a cutoff
    take part in every cutoff present in ``records``.  Exact ties go to the
    lexicographically smallest regime and are also tallied in ``ties``.
    Cells missing any competing regime are skipped.
    """
    records = list(records)
    if regimes is None:
        regimes = sorted({r.regime for r in records})
    regimes = sorted(regimes)
    cutoffs = sorted({r.cutoff for r in records if r.cutoff is not None}) or [None]
    cells = defaultdict(dict)
    for r in records:
        for c in (cutoffs if r.cutoff is None else [r.cutoff]):
            cells[(r.disease, r.city, r.horizon, c)][r.regime] = r.pmae
    counts = defaultdict(int)
    ties = defaultdict(int)
    groups = set()
    skipped = 0
    for (disease, city, h, c), vals in cells.items():
        key = (disease if by_disease else None, h, c)
        groups.add(key)
        if any(g not in vals for g in regimes):
            skipped += 1
            continue
        best = min(vals[g] for g in regimes)
        winners = [g for g in regimes if vals[g] == best]
        counts[key + (winners[0],)] += 1
        if len(winners) > 1:
            ties[key + (winners[0],)] += 1
            log.info("tie in %s/%s h=%s c=%s between %s", disease, city, h, c, winners)
    if skipped:
        log.warning("best_model_frequency: %d cells skipped (missing regimes)", skipped)
    out = [Frequency(h, c, g, counts[(d, h, c, g)], ties[(d, h, c, g)], d)
           for d, h, c in groups for g in regimes]
    out.sort(key=lambda f: (f.disease or "", f.horizon, _cutoff_key(f.cutoff), f.regime))
    return out


# --------------------------------------------------------------------------
# similarity


@dataclass(frozen=True)
class SimilarityEntry:
    beta: float
    gamma: float
    median_corr: float
    pairs_used: int
    pairs_skipped: int = 0


@dataclass(frozen=True)
class SimilarityMap:
    entries: tuple[SimilarityEntry, ...]

    def __getitem__(self, key) -> float:
        for e in self.entries:
            if (e.beta, e.gamma) == key:
                return e.median_corr
        raise KeyError(key)

    def argmax(self):
        e = max(self.entries, key=lambda e: e.median_corr)
        return e.beta, e.gamma

    def argmin(self):
        e = min(self.entries, key=lambda e: e.median_corr)
        return e.beta, e.gamma

    def to_csv(self) -> str:
        lines = [SIMILARITY_HEADER]
        for e in sorted(self.entries, key=lambda e: (e.beta, e.gamma)):
            lines.append(f"{fmt(e.beta)},{fmt(e.gamma)},{fmt(e.median_corr)},{e.pairs_used}")
        return "\n".join(lines) + "\n"


def _standardize(series):
    X = np.vstack([np.asarray(s.values if hasattr(s, "values") else s, dtype=float)
                   for s in series])
    X = X - X.mean(axis=1, keepdims=True)
    norm = np.sqrt((X * X).sum(axis=1))
    ok = norm > 0
    Z = np.zeros_like(X)
    Z[ok] = X[ok] / norm[ok, None]
    return Z, ok


def pairwise_correlations(a, b):
    """Pearson correlations for every (a_i, b_j) pair with non-zero variance.

    Returns (flat array of correlations, number of skipped pairs).
    """
    lengths = {len(getattr(s, "values", s)) for s in list(a) + list(b)}
    if len(lengths) > 1:
        raise ValueError("all series must have equal length")
    Za, oka = _standardize(a)
    Zb, okb = _standardize(b)
    C = np.clip(Za[oka] @ Zb[okb].T, -1.0, 1.0)
    skipped = len(oka) * len(okb) - C.size
    return C.ravel(), skipped


def similarity_map(source_series, targets: dict) -> SimilarityMap:
    """Median pairwise Pearson correlation of each target disease with the source.

    ``targets`` maps ``beta=..;gamma=..`` labels (or (beta, gamma) tuples) to
    series collections.
    """
    entries = []
    for label, series in targets.items():
        beta, gamma = label if isinstance(label, tuple) else parse_target_label(label)
        corr, skipped = pairwise_correlations(source_series, series)
        if skipped:
            log.warning("similarity %s: %d zero-variance pairs skipped", label, skipped)
        med = float(np.median(corr)) if corr.size else float("nan")
        entries.append(SimilarityEntry(beta, gamma, med, int(corr.size), int(skipped)))
    return SimilarityMap(tuple(sorted(entries, key=lambda e: (e.beta, e.gamma))))


# --------------------------------------------------------------------------
# report


SUMMARY_HEADER = "regime,disease,horizon,cutoff,n,median,q1,q3"


def summarize(records):
    """Median and quartiles of pmae per (regime, disease, horizon, cutoff)."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.regime, r.disease, r.horizon, r.cutoff)].append(r.pmae)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], _cutoff_key(k[3]))):
        v = np.array(groups[key])
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        out.append(key + (len(v), float(med), float(q1), float(q3)))
    return out


def _freq_csv(rows, with_disease: bool) -> str:
    header = ("disease," if with_disease else "") + BEST_HEADER
    lines = [header]
    for f in rows:
        prefix = f"{f.disease}," if with_disease else ""
        lines.append(f"{prefix}{f.horizon},{fmt(f.cutoff)},{f.regime},{f.count},{f.ties}")
    return "\n".join(lines) + "\n"


def _text_summary(summary, freq, similarity) -> str:
    lines = ["Median pmae by regime (all diseases, horizons and cutoffs pooled)", ""]
    pooled = defaultdict(list)
    for regime, _, _, _, _, med, _, _ in summary:
        pooled[regime].append(med)
    for regime in sorted(pooled):
        lines.append(f"  {regime:<16} {np.median(pooled[regime]):.6g}")
    totals = defaultdict(int)
    for f in freq:
        totals[f.regime] += f.count
    if totals:
        lines += ["", "Best-model wins (all horizons and cutoffs)", ""]
        for regime in sorted(totals):
            lines.append(f"  {regime:<16} {totals[regime]}")
    if similarity is not None and similarity.entries:
        lines += ["", "Median correlation with the source", ""]
        for e in similarity.entries:
            lines.append(f"  beta={e.beta:g} gamma={e.gamma:g}  {e.median_corr:+.4f}")
    return "\n".join(lines) + "\n"


def assemble_report(records, similarity: SimilarityMap | None = None,
                    test_sets: dict | None = None, exclusions=()) -> dict[str, str]:
    """Build the report bundle as {file name: text}.

    ``test_sets`` maps (disease, horizon) to the test-set content hash.
    """
    records = sorted(records, key=EvalRecord.sort_key)
    files = {}
    files["errors.csv"] = "\n".join([ERRORS_HEADER] + [r.csv_row() for r in records]) + "\n"
    summary = summarize(records)
    lines = [SUMMARY_HEADER]
    for regime, disease, h, c, n, med, q1, q3 in summary:
        lines.append(f"{regime},{disease},{h},{fmt(c)},{n},{fmt(med)},{fmt(q1)},{fmt(q3)}")
    files["summary.csv"] = "\n".join(lines) + "\n"
    freq = best_model_frequency(records)
    files["best_models.csv"] = _freq_csv(freq, False)
    files["best_models_by_disease.csv"] = _freq_csv(
        best_model_frequency(records, by_disease=True), True)
    files["similarity.csv"] = (similarity or SimilarityMap(())).to_csv()
    lines = ["disease,horizon,sha256"]
    for (d, h), digest in sorted((test_sets or {}).items()):
        lines.append(f"{d},{h},{digest}")
    files["test_sets.csv"] = "\n".join(lines) + "\n"
    lines = ["disease,city,reason"]
    for e in sorted(set(exclusions), key=lambda e: (e.disease, e.city)):
        lines.append(f"{e.disease},{e.city},{e.reason}")
    files["coverage.csv"] = "\n".join(lines) + "\n"
    files["summary.txt"] = _text_summary(summary, freq, similarity)
    return files


def write_report(bundle: dict[str, str], directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(bundle):
        p = directory / name
        p.write_bytes(bundle[name].encode("utf-8"))
        paths.append(p)
    return paths
