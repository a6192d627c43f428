import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xferepi import datasets as ds
from xferepi import evaluate as ev
from xferepi.simcore import EpidemicSeries


def rec(regime, pmae, city="c0", disease="d", h=2, cutoff=None):
    return ev.EvalRecord(regime, disease, city, h, cutoff, pmae * 10, pmae)


def test_percent_mae_examples():
    assert ev.percent_mae([1, 2, 3], [1, 2, 3], 10) == 0
    assert ev.percent_mae([0, 0], [2, 4], 100) == pytest.approx(0.03)
    with pytest.raises(ValueError):
        ev.percent_mae([1], [1], 0)
    with pytest.raises(ValueError):
        ev.percent_mae([], [], 1)


@settings(max_examples=50, deadline=None)
@given(k=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_percent_mae_is_scale_free(k, seed):
    rng = np.random.default_rng(seed)
    p, t = rng.uniform(0, 50, 20), rng.uniform(0, 50, 20)
    total = t.sum() + 1
    assert ev.percent_mae(p * k, t * k, total * k) == pytest.approx(ev.percent_mae(p, t, total))


def test_records_reject_bad_values():
    with pytest.raises(ValueError):
        ev.EvalRecord("r", "d", "c", 2, None, float("nan"), 0.1)
    with pytest.raises(ValueError):
        ev.EvalRecord("r", "d", "c", 2, None, 1.0, -0.1)


def _dataset():
    series = [EpidemicSeries("d", r, np.arange(40.0) * (r + 1)) for r in range(2)]
    return ds.build_dataset(series, ds.WindowConfig(horizons=(2,)), 2)


def test_score_is_per_city():
    data = _dataset()
    preds = data.targets + np.where(data.series_id == "d/0", 1.0, 3.0)
    totals = {"d/0": 780.0, "d/1": 1560.0}
    records, excluded = ev.score("rf_baseline", "d", data, preds, totals, 2, None)
    assert not excluded
    assert [(r.city, r.mae) for r in records] == [("0", 1.0), ("1", 3.0)]
    assert records[1].pmae == pytest.approx(3.0 / 1560)


def test_score_excludes_cities_without_cases():
    data = _dataset()
    records, excluded = ev.score("x", "d", data, data.targets, {"d/0": 0.0, "d/1": 5.0}, 2, None)
    assert [r.city for r in records] == ["1"]
    assert excluded == [ev.Exclusion("d", "0", "zero total cases")]


def test_best_model_counts_and_ties():
    records = [rec("a", 0.2, "c0"), rec("b", 0.1, "c0"),
               rec("a", 0.3, "c1"), rec("b", 0.3, "c1"),
               rec("a", 0.1, "c2"), rec("b", 0.5, "c2")]
    freq = {f.regime: f for f in ev.best_model_frequency(records)}
    # c1 is an exact tie and goes to "a"
    assert freq["a"].count == 2 and freq["a"].ties == 1
    assert freq["b"].count == 1 and freq["b"].ties == 0


def test_uncut_records_compete_at_every_cutoff():
    records = [rec("base", 0.2), rec("boost", 0.1, cutoff=25), rec("boost", 0.3, cutoff=35)]
    freq = {(f.cutoff, f.regime): f.count for f in ev.best_model_frequency(records)}
    assert freq == {(25, "base"): 0, (25, "boost"): 1, (35, "base"): 1, (35, "boost"): 0}


def test_incomplete_cells_are_skipped():
    records = [rec("a", 0.1, "c0"), rec("b", 0.2, "c0"), rec("a", 0.1, "c1")]
    assert sum(f.count for f in ev.best_model_frequency(records)) == 1


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.lists(st.sampled_from([0.1, 0.2, 0.3]), min_size=3, max_size=3),
                       min_size=1, max_size=20))
def test_counts_partition_the_cells(values):
    records = [rec(g, v, f"c{i}") for i, row in enumerate(values) for g, v in zip("xyz", row)]
    freq = ev.best_model_frequency(records)
    assert sum(f.count for f in freq) == len(values)


def test_counts_by_disease():
    records = [rec("a", 0.1, disease="p"), rec("b", 0.2, disease="p"),
               rec("a", 0.3, disease="q"), rec("b", 0.2, disease="q")]
    freq = {(f.disease, f.regime): f.count
            for f in ev.best_model_frequency(records, by_disease=True)}
    assert freq == {("p", "a"): 1, ("p", "b"): 0, ("q", "a"): 0, ("q", "b"): 1}


def test_correlation_extremes():
    x = np.sin(np.linspace(0, 6, 50))
    corr, skipped = ev.pairwise_correlations([x], [x, -x, 3 * x + 2])
    assert corr == pytest.approx([1.0, -1.0, 1.0])
    assert skipped == 0


def test_constant_series_are_skipped():
    x = np.arange(10.0)
    corr, skipped = ev.pairwise_correlations([x, np.zeros(10)], [x])
    assert corr.tolist() == [pytest.approx(1.0)] and skipped == 1
    with pytest.raises(ValueError):
        ev.pairwise_correlations([x], [np.arange(5.0)])


def test_correlations_match_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 30)), rng.normal(size=(4, 30))
    corr, _ = ev.pairwise_correlations(a, b)
    expected = [np.corrcoef(x, y)[0, 1] for x in a for y in b]
    assert corr == pytest.approx(expected)


def test_similarity_map_lookup():
    x = np.sin(np.linspace(0, 6, 50))
    smap = ev.similarity_map([x], {"beta=0.25;gamma=0.01": [x], (0.35, 0.15): [-x]})
    assert smap[(0.25, 0.01)] == pytest.approx(1.0)
    assert smap.argmax() == (0.25, 0.01) and smap.argmin() == (0.35, 0.15)
    lines = smap.to_csv().splitlines()
    assert lines[0] == "beta,gamma,median_corr,pairs_used"
    assert lines[1].startswith("0.25,0.01,1")


def test_summary_matches_statistics_module():
    rng = np.random.default_rng(3)
    values = rng.uniform(0, 1, 13).tolist()
    records = [rec("a", v, f"c{i}") for i, v in enumerate(values)]
    (row,) = ev.summarize(records)
    q1, med, q3 = statistics.quantiles(values, n=4, method="inclusive")
    assert row[4] == 13
    assert row[5] == pytest.approx(statistics.median(values))
    assert row[6] == pytest.approx(q1) and row[7] == pytest.approx(q3)
    assert med == pytest.approx(row[5])


def test_empty_report_has_headers_only():
    bundle = ev.assemble_report([])
    assert set(bundle) == {"errors.csv", "summary.csv", "best_models.csv",
                           "best_models_by_disease.csv", "similarity.csv", "test_sets.csv",
                           "coverage.csv", "summary.txt"}
    assert bundle["errors.csv"] == ev.ERRORS_HEADER + "\n"
    assert bundle["summary.csv"] == ev.SUMMARY_HEADER + "\n"
    assert bundle["best_models.csv"] == ev.BEST_HEADER + "\n"


def test_report_is_order_independent(tmp_path):
    records = [rec(g, v, c, h=h) for g, v in (("a", 0.1), ("b", 0.2))
               for c in ("c0", "c1") for h in (2, 3)]
    a = ev.assemble_report(records, test_sets={("d", 2): "ff"})
    b = ev.assemble_report(records[::-1], test_sets={("d", 2): "ff"})
    assert a == b
    paths = ev.write_report(a, tmp_path)
    assert sorted(p.name for p in paths) == sorted(a)
    assert (tmp_path / "errors.csv").read_text() == a["errors.csv"]


def test_errors_csv_round_trips_floats():
    r = ev.EvalRecord("a", "d", "c", 2, 25, 1 / 3, 2 / 7)
    fields = r.csv_row().split(",")
    assert fields[4] == "25"
    assert float(fields[6]) == pytest.approx(2 / 7, rel=1e-10)
