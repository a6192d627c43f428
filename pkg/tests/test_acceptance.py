"""Acceptance checks for the study, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line with the measured values
and then asserts.  Tolerances are pinned as module constants.

Criteria 6-8 simulate the full grid for five master seeds and take several
minutes.  Criterion 10 runs the shipped small config twice; set
XFEREPI_FULL_STUDY=1 to run the default config instead and also check its
wall-clock budget.
"""

import math
import os
import shutil
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from xferepi import cli
from xferepi import datasets as ds
from xferepi import forest as rf
from xferepi import neural as nn
from xferepi import simcore as sc
from xferepi import transfer as tr
from xferepi.config import from_dict
from xferepi.pipeline import run_horizon, simulate_study, study_similarity
from xferepi.rng import make_rng

from test_forest import exhaustive_best_reduction, split_reduction
from test_neural import finite_difference, flat_grad, relative_error
from test_transfer import (EXPECTED_BETAS, EXPECTED_TRACE, GROUPS, XS, XT, YS, YT,
                           constant_learner)

ROOT = Path(__file__).resolve().parents[1]
MASTER_SEEDS = (0, 1, 2, 3, 4)
REQUIRED_SEEDS = 4

SIM_RUNTIME = 10.0           # seconds, criteria 1 and 2
MEAN_TOLERANCE = 0.02        # relative, criterion 2
GRAD_TOLERANCE = 1e-4        # criterion 3
SPLIT_TOLERANCE = 1e-9       # criterion 4
WEAK_CORRELATION = 0.2       # criterion 6
SIMILARITY_RUNTIME = 300.0   # criterion 6
ORDERING_RUNTIME = 1800.0    # criteria 7 and 8
ORDERING_REPLICATES = 30
STUDY_RUNTIME = 3600.0       # criterion 10, full study only

SIMILAR = (0.25, 0.01)
DISSIMILAR = (0.35, 0.15)
CUTOFF = 25
FULL_STUDY = os.environ.get("XFEREPI_FULL_STUDY") == "1"


def announce(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_01_conservation_and_determinism(capsys):
    cfg = sc.SimConfig(t_max=1000)
    t0 = time.perf_counter()
    violations = 0
    for seed in range(100):
        traj = sc.simulate_trajectory(cfg, sc.SOURCE_PARAMS, make_rng(seed, "acceptance"))
        violations += int(np.sum(traj[:, :4].sum(axis=1) != cfg.population_n))
    elapsed = time.perf_counter() - t0
    identical = all(
        sc.simulate_trajectory(cfg, sc.SOURCE_PARAMS, make_rng(s, "acceptance")).tobytes()
        == sc.simulate_trajectory(cfg, sc.SOURCE_PARAMS, make_rng(s, "acceptance")).tobytes()
        for s in range(100))
    ok = violations == 0 and identical and elapsed < SIM_RUNTIME
    announce(capsys, 1, ok, f"{violations} conservation violations, repeat runs identical="
                            f"{identical}, 100 runs in {elapsed:.2f}s (< {SIM_RUNTIME:g}s)")


def test_criterion_02_binomial_expectation(capsys):
    expected = 990 * (1 - math.exp(-0.191 * 10 / 1000))
    state = sc.SirdState(990, 10, 0, 0)
    rng = make_rng(2, "acceptance")
    t0 = time.perf_counter()
    total = sum(sc.step_with_events(state, sc.SOURCE_PARAMS, rng)[1][0] for _ in range(100_000))
    elapsed = time.perf_counter() - t0
    mean = total / 100_000
    rel = abs(mean / expected - 1)
    ok = rel < MEAN_TOLERANCE and elapsed < SIM_RUNTIME
    announce(capsys, 2, ok, f"mean {mean:.4f} vs {expected:.4f} (rel err {rel:.4f} < "
                            f"{MEAN_TOLERANCE}), {elapsed:.2f}s")


def test_criterion_03_gradient(capsys):
    arch = nn.NetArchitecture()
    assert arch.widths == (9, 64, 32, 32, 1)
    worst = 0.0
    for point in range(20):
        rng = np.random.default_rng(1000 + point)
        params = nn.init(arch, 1000 + point)
        for layer in params.layers:
            layer.b[...] = rng.normal(scale=0.1, size=layer.b.shape)
        X, y = rng.normal(size=(4, 9)), rng.normal(size=4)
        _, grads = nn.grad(params, X, y)
        worst = max(worst, relative_error(flat_grad(grads),
                                          finite_difference(params, X, y)).max())
    announce(capsys, 3, worst < GRAD_TOLERANCE,
             f"max relative error {worst:.2e} (< {GRAD_TOLERANCE:g})")


def test_criterion_04_split_oracle(capsys):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(25):
        n, p = int(rng.integers(2, 51)), int(rng.integers(1, 4))
        X = rng.integers(0, 10, size=(n, p)).astype(float)
        y = rng.normal(size=n)
        w = rng.uniform(0.1, 3.0, n)
        tree = rf.fit_tree(X, y, w, max_depth=1)
        best, _ = exhaustive_best_reduction(X, y, w)
        got = 0.0 if tree.n_nodes == 1 else split_reduction(tree, X, y, w)
        worst = max(worst, abs(got - best))
    announce(capsys, 4, worst <= SPLIT_TOLERANCE,
             f"max |reduction - exhaustive| {worst:.1e} over 25 datasets (<= {SPLIT_TOLERANCE:g})")


def test_criterion_05_horizon_fairness(capsys):
    series = sc.EpidemicSeries("d", 0, np.arange(1000.0))
    cfg = ds.WindowConfig()
    common = set(range(1000))
    for h in cfg.horizons:
        common &= {tau for tau in range(1000) if tau - h - (cfg.lags - 1) >= 0}
    built = ds.align_warmup({h: ds.make_windows(series, cfg, h) for h in cfg.horizons})
    sizes = {h: len(d) for h, d in built.items()}
    same = all(set(d.target_t.tolist()) == common for d in built.values())
    ok = len(common) == 983 and set(sizes.values()) == {983} and same
    announce(capsys, 5, ok, f"brute force {len(common)} shared targets, rows per horizon "
                            f"{sorted(set(sizes.values()))}, identical indices={same}")


@pytest.mark.slow
def test_criterion_06_similarity_map(capsys):
    t0 = time.perf_counter()
    hits, notes = 0, []
    for seed in MASTER_SEEDS:
        smap = study_similarity(simulate_study(from_dict({"version": 1, "seed": seed})))
        weak = smap[DISSIMILAR]
        good = (smap.argmax() == SIMILAR and smap.argmin() == DISSIMILAR
                and abs(weak) < WEAK_CORRELATION)
        hits += good
        notes.append(f"seed {seed}: max {smap.argmax()} min {smap.argmin()} "
                     f"corr{DISSIMILAR}={weak:+.3f}")
    elapsed = time.perf_counter() - t0
    ok = hits >= REQUIRED_SEEDS and elapsed < SIMILARITY_RUNTIME
    announce(capsys, 6, ok, f"{hits}/5 seeds match, {elapsed:.0f}s; " + "; ".join(notes))


def _label(beta_gamma):
    return sc.target_label(*beta_gamma)


@pytest.fixture(scope="module")
def ordering_runs():
    """Per seed: median pmae by (disease, horizon, regime), plus total runtime."""
    t0 = time.perf_counter()
    out = {}
    similar, dissimilar = _label(SIMILAR), _label(DISSIMILAR)
    for seed in MASTER_SEEDS:
        cfg = from_dict({"version": 1, "seed": seed,
                         "simulation": {"replicates": ORDERING_REPLICATES},
                         "datasets": {"cutoffs": [CUTOFF]}})
        grid = simulate_study(cfg)
        records = []
        for h in cfg.window.horizons:
            if h == 2:
                records += run_horizon(cfg, grid, h, targets=[similar, dissimilar]).records
            else:
                records += run_horizon(cfg, grid, h, targets=[similar],
                                       regimes=["rf_baseline", "nn_baseline",
                                                "nn_no_transfer", "nn_transfer"]).records
        groups = defaultdict(list)
        for r in records:
            groups[(r.disease, r.horizon, r.regime)].append(r.pmae)
        out[seed] = {k: float(np.median(v)) for k, v in groups.items()}
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_07_similar_disease_ordering(ordering_runs, capsys):
    runs, elapsed = ordering_runs
    similar = _label(SIMILAR)
    hits, notes = 0, []
    for seed, med in runs.items():
        horizons = sorted({h for d, h, _ in med if d == similar})
        wins = 0
        for h in horizons:
            transfer = min(med[(similar, h, "nn_no_transfer")], med[(similar, h, "nn_transfer")])
            baseline = min(med[(similar, h, "rf_baseline")], med[(similar, h, "nn_baseline")])
            wins += transfer < baseline
        hits += wins > len(horizons) / 2
        notes.append(f"seed {seed}: {wins}/{len(horizons)} horizons")
    ok = hits >= REQUIRED_SEEDS and elapsed < ORDERING_RUNTIME
    announce(capsys, 7, ok, f"{hits}/5 seeds with a majority, {elapsed:.0f}s for 7+8; "
                            + "; ".join(notes))


@pytest.mark.slow
def test_criterion_08_dissimilar_disease_ordering(ordering_runs, capsys):
    runs, elapsed = ordering_runs
    dissimilar = _label(DISSIMILAR)
    hits, notes = 0, []
    for seed, med in runs.items():
        row = {g: v for (d, h, g), v in med.items() if d == dissimilar and h == 2}
        winner = min(sorted(row), key=row.get)
        assert set(row) == set(tr.ALL_LABELS)
        hits += winner == "rf_baseline"
        notes.append(f"seed {seed}: {winner}")
    ok = hits >= REQUIRED_SEEDS and elapsed < ORDERING_RUNTIME
    announce(capsys, 8, ok, f"{hits}/5 seeds won by rf_baseline at h=2; " + "; ".join(notes))


def test_criterion_09_weight_trace(capsys):
    cfg = tr.BoostConfig(steps=4, rounds=3, folds=3)
    model = tr.two_stage_tradaboost(XS, YS, XT, YT, GROUPS, constant_learner(), cfg, seed=0)
    trace = np.array(model.source_weight_trace)
    matches = (trace.shape == np.shape(EXPECTED_TRACE)
               and np.allclose(trace, EXPECTED_TRACE, rtol=1e-10, atol=1e-15)
               and np.allclose(model.betas, EXPECTED_BETAS, rtol=0, atol=1e-12))
    monotone = bool(np.all(np.diff(trace, axis=0) <= 0))
    announce(capsys, 9, matches and monotone,
             f"trace matches fixture={matches}, non-increasing={monotone}")


@pytest.mark.slow
def test_criterion_10_end_to_end(tmp_path, capsys):
    config = ROOT / "configs" / ("default.yaml" if FULL_STUDY else "small.yaml")
    jobs = "4" if FULL_STUDY else "1"
    t0 = time.perf_counter()
    assert cli.main(["all", "--config", str(config), "--out", str(tmp_path / "a"),
                     "--jobs", jobs]) == 0
    elapsed = time.perf_counter() - t0
    assert cli.main(["all", "--config", str(config), "--out", str(tmp_path / "b"),
                     "--jobs", jobs]) == 0
    names = sorted(p.name for p in (tmp_path / "a" / "report").glob("*.csv"))
    differ = [n for n in names if (tmp_path / "a" / "report" / n).read_bytes()
              != (tmp_path / "b" / "report" / n).read_bytes()]
    ok = bool(names) and not differ
    if FULL_STUDY:
        ok = ok and elapsed < STUDY_RUNTIME
        scale = f"default config, first run {elapsed / 60:.1f} min (< 60)"
    else:
        scale = (f"small config ({elapsed:.0f}s per run); full-scale runtime not measured, "
                 f"set XFEREPI_FULL_STUDY=1")
    announce(capsys, 10, ok, f"{len(names) - len(differ)}/{len(names)} report CSVs identical; "
                             + scale)
    shutil.rmtree(tmp_path, ignore_errors=True)
