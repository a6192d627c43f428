"""Artifact-producing stages and the run manifest.

Run directory layout::

    manifest.json
    simulate/series.npz          train and test series of every disease
    simulate/series_{split}.csv  optional CSV export
    prepare/datasets.json        row counts and content hashes of every dataset
    prepare/test_sets.csv        test-set hash per (disease, horizon)
    train/h{h}/records.csv       per-city errors of every model at horizon h
    train/h{h}/models.json       model cards
    train/h{h}/training_logs.csv network training curves
    train/h{h}/networks/*.npz    network parameters (optional)
    train/h{h}/forests/*.npz     forests (optional; large)
    evaluate/errors.csv, evaluate/similarity.csv, evaluate/coverage.csv
    report/...                   the report bundle

A stage is skipped when its manifest entry matches the current input key
and every artifact it lists still has its recorded hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluate as ev
from . import forest as rf
from . import neural as nn
from .config import ExperimentConfig
from .datasets import build_dataset, write_dataset_csv
from .pipeline import run_horizon, study_similarity
from .simcore import (SOURCE_LABEL, DiseaseSets, EpidemicSeries, generate_grid,
                      parse_target_label, series_to_rows)

log = logging.getLogger(__name__)

STAGES = ("simulate", "prepare", "train", "evaluate", "report")
UPSTREAM = {"prepare": ("simulate",), "train": ("simulate", "prepare"),
            "evaluate": ("simulate", "prepare", "train"), "report": ("prepare", "evaluate")}
CONFIG_SECTIONS = {
    "simulate": ("simulation", "outputs"),
    "prepare": ("datasets", "outputs"),
    "train": ("datasets", "forest", "network", "transfer", "boosting", "regimes", "outputs"),
    "evaluate": ("regimes",),
    "report": (),
}


class MissingArtifact(Exception):
    def __init__(self, stage: str, detail: str):
        self.stage = stage
        super().__init__(f"{detail}; run the '{stage}' stage first")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, root):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        self.data = {"tool_version": __version__, "config_sha256": None, "stages": {}}
        if self.path.exists():
            try:
                self.data = json.loads(self.path.read_text())
            except json.JSONDecodeError:
                log.warning("unreadable manifest; starting afresh")

    def save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        self.data["tool_version"] = __version__
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def entry(self, stage):
        return self.data["stages"].get(stage)

    def intact(self, stage) -> bool:
        e = self.entry(stage)
        if e is None:
            return False
        for rel, digest in e["artifacts"].items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != digest:
                log.info("%s: artifact %s missing or modified", stage, rel)
                return False
        return True

    def digest(self, stage) -> str:
        e = self.entry(stage)
        return hashlib.sha256(json.dumps(e["artifacts"], sort_keys=True).encode()).hexdigest()

    def record(self, stage, key, seconds):
        stage_dir = self.root / stage
        files = sorted(p for p in stage_dir.rglob("*") if p.is_file())
        self.data["stages"][stage] = {
            "input_key": key,
            "seconds": round(seconds, 3),
            "artifacts": {p.relative_to(self.root).as_posix(): sha256_file(p) for p in files},
        }
        self.save()


def input_key(cfg: ExperimentConfig, manifest: Manifest, stage: str) -> str:
    parts = [cfg.section_hash(*CONFIG_SECTIONS[stage])]
    parts += [manifest.digest(up) for up in UPSTREAM.get(stage, ())]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()


def run_stage(stage: str, cfg: ExperimentConfig, root, *, force=False, jobs=1) -> bool:
    """Run one stage unless it is up to date.  Returns True if it ran."""
    root = Path(root)
    manifest = Manifest(root)
    for up in UPSTREAM.get(stage, ()):
        if not manifest.intact(up):
            raise MissingArtifact(up, f"'{stage}' needs the outputs of '{up}', which are "
                                      f"missing or do not match the manifest")
    key = input_key(cfg, manifest, stage)
    e = manifest.entry(stage)
    if not force and e is not None and e["input_key"] == key and manifest.intact(stage):
        log.info("%s: up to date, skipping", stage)
        return False
    stage_dir = root / stage
    if stage_dir.exists():
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True)
    t0 = time.perf_counter()
    log.info("%s: running", stage)
    STAGE_FUNCS[stage](cfg, root, jobs)
    manifest.data["config_sha256"] = cfg.section_hash(*sorted(cfg.raw))
    manifest.record(stage, key, time.perf_counter() - t0)
    # downstream entries are now stale
    for later in STAGES[STAGES.index(stage) + 1:]:
        if later in manifest.data["stages"] and stage in UPSTREAM.get(later, ()):
            manifest.data["stages"][later]["input_key"] = None
    manifest.save()
    return True


# --------------------------------------------------------------------------
# simulate


def _simulate(cfg, root, jobs):
    grid = generate_grid(cfg.source, cfg.target_betas, cfg.target_gammas, cfg.sim)
    arrays = {}
    for d in grid:
        for split in ("train", "test"):
            arrays[f"{d.label}|{split}"] = np.vstack([s.values for s in getattr(d, split)])
    with open(root / "simulate" / "series.npz", "wb") as f:
        np.savez(f, **arrays)
    if cfg.outputs["series_csv"]:
        for split in ("train", "test"):
            with open(root / "simulate" / f"series_{split}.csv", "w", newline="\n") as f:
                f.write("disease,replicate,t,cases\n")
                for d in grid:
                    for row in series_to_rows(getattr(d, split)):
                        f.write(",".join(map(str, row)) + "\n")


def load_grid(cfg: ExperimentConfig, root) -> list[DiseaseSets]:
    path = Path(root) / "simulate" / "series.npz"
    if not path.exists():
        raise MissingArtifact("simulate", f"{path} not found")
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    labels = sorted({k.split("|")[0] for k in data}, key=lambda s: (s != SOURCE_LABEL, s))
    out = []
    for label in labels:
        if label == SOURCE_LABEL:
            params = cfg.source
        else:
            b, g = parse_target_label(label)
            params = replace(cfg.source, beta=b, gamma=g)
        sets = {split: tuple(EpidemicSeries(label, k, row, cfg.sim.kind)
                             for k, row in enumerate(data[f"{label}|{split}"]))
                for split in ("train", "test")}
        out.append(DiseaseSets(label, params, sets["train"], sets["test"]))
    return out


# --------------------------------------------------------------------------
# prepare


def _prepare(cfg, root, jobs):
    grid = load_grid(cfg, root)
    w = cfg.window
    info, tests = [], []
    audit_dir = root / "prepare" / "datasets"
    for d in grid:
        for h in w.horizons:
            for split in ("train", "test"):
                cuts = [None] + list(cfg.cutoffs.values) if (
                    split == "train" and d.label != SOURCE_LABEL) else [None]
                for c in cuts:
                    data = build_dataset(getattr(d, split), w, h, cutoff=c)
                    digest = data.content_hash()
                    info.append({"disease": d.label, "split": split, "horizon": h,
                                 "cutoff": c, "rows": len(data), "sha256": digest})
                    if split == "test":
                        tests.append((d.label, h, digest))
                    if cfg.outputs["dataset_csv"]:
                        audit_dir.mkdir(exist_ok=True)
                        tag = "full" if c is None else f"cut{c}"
                        name = f"{_safe(d.label)}_{split}_h{h}_{tag}.csv"
                        write_dataset_csv([data], audit_dir / name)
    (root / "prepare" / "datasets.json").write_text(json.dumps(info, indent=1) + "\n")
    lines = ["disease,horizon,sha256"] + [f"{d},{h},{x}" for d, h, x in sorted(tests)]
    (root / "prepare" / "test_sets.csv").write_text("\n".join(lines) + "\n")


def _safe(label: str) -> str:
    return label.replace("=", "").replace(";", "_")


def load_test_hashes(root) -> dict:
    path = Path(root) / "prepare" / "test_sets.csv"
    if not path.exists():
        raise MissingArtifact("prepare", f"{path} not found")
    out = {}
    for line in path.read_text().splitlines()[1:]:
        d, h, x = line.rsplit(",", 2)
        out[(d, int(h))] = x
    return out


# --------------------------------------------------------------------------
# train


def _train_horizon(cfg: ExperimentConfig, grid, horizon: int, root: str, expected: dict):
    hdir = Path(root) / "train" / f"h{horizon}"
    hdir.mkdir(parents=True, exist_ok=True)
    logs = []

    def persist(model, disease):
        c = "full" if model.tag.cutoff is None else f"cut{model.tag.cutoff}"
        name = f"{model.tag.label}_{_safe(disease)}_{c}"
        if model.is_network:
            if cfg.outputs["save_networks"]:
                (hdir / "networks").mkdir(exist_ok=True)
                nn.save_params(model.model, hdir / "networks" / f"{name}.npz")
            if model.history is not None:
                body = model.history.to_csv().splitlines()[1:]
                logs.extend(f"{name},{row}" for row in body)
        elif isinstance(model.model, rf.ForestModel) and cfg.outputs["save_forests"]:
            (hdir / "forests").mkdir(exist_ok=True)
            rf.save_forest(model.model, hdir / "forests" / f"{name}.npz")

    res = run_horizon(cfg, grid, horizon, on_model=persist)
    for key, digest in res.test_hashes.items():
        if expected.get(key) != digest:
            raise RuntimeError(f"test set for {key} does not match the prepared snapshot")
    records = sorted(res.records, key=ev.EvalRecord.sort_key)
    (hdir / "records.csv").write_text(
        "\n".join([ev.ERRORS_HEADER] + [r.csv_row() for r in records]) + "\n")
    excl = sorted(set(res.exclusions), key=lambda e: (e.disease, e.city))
    (hdir / "coverage.csv").write_text(
        "\n".join(["disease,city,reason"] + [f"{e.disease},{e.city},{e.reason}"
                                             for e in excl]) + "\n")
    (hdir / "models.json").write_text(json.dumps(res.cards, indent=1, sort_keys=True) + "\n")
    (hdir / "training_logs.csv").write_text(
        "\n".join(["model,epoch,train_mse,val_mse,lr"] + logs) + "\n")
    return horizon


def _train(cfg, root, jobs):
    grid = load_grid(cfg, root)
    expected = load_test_hashes(root)
    horizons = list(cfg.window.horizons)
    if jobs > 1 and len(horizons) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(horizons))) as pool:
            futures = [pool.submit(_train_horizon, cfg, grid, h, str(root), expected)
                       for h in horizons]
            for f in futures:
                log.info("train: horizon %d done", f.result())
    else:
        for h in horizons:
            _train_horizon(cfg, grid, h, str(root), expected)
            log.info("train: horizon %d done", h)


# --------------------------------------------------------------------------
# evaluate and report


def _parse_cutoff(s):
    return None if s == "" else int(s)


def read_records(path):
    out = []
    for line in Path(path).read_text().splitlines()[1:]:
        regime, disease, city, h, c, mae, pmae = line.split(",")
        out.append(ev.EvalRecord(regime, disease, city, int(h), _parse_cutoff(c), float(mae),
                                 float(pmae)))
    return out


def _read_rows(path):
    lines = Path(path).read_text().splitlines()
    return [line.split(",") for line in lines[1:]]


def _evaluate(cfg, root, jobs):
    files = sorted((root / "train").glob("h*/records.csv"))
    if not files:
        raise MissingArtifact("train", "no training records found")
    records = [r for f in files for r in read_records(f)]
    # comparability: every regime is scored on the same cities per (disease, horizon)
    cities = {}
    for r in records:
        cities.setdefault((r.disease, r.horizon, r.regime, r.cutoff), set()).add(r.city)
    ref = {}
    for (d, h, _, _), cs in cities.items():
        if ref.setdefault((d, h), cs) != cs:
            raise RuntimeError(f"regimes scored on different cities for {d} h={h}")
    records.sort(key=ev.EvalRecord.sort_key)
    (root / "evaluate" / "errors.csv").write_text(
        "\n".join([ev.ERRORS_HEADER] + [r.csv_row() for r in records]) + "\n")
    excl = sorted({tuple(row) for f in (root / "train").glob("h*/coverage.csv")
                   for row in _read_rows(f)})
    (root / "evaluate" / "coverage.csv").write_text(
        "\n".join(["disease,city,reason"] + [",".join(e) for e in excl]) + "\n")
    sim = study_similarity(load_grid(cfg, root))
    (root / "evaluate" / "similarity.csv").write_text(sim.to_csv())


def read_similarity(path) -> ev.SimilarityMap:
    entries = [ev.SimilarityEntry(float(b), float(g), float(m), int(n))
               for b, g, m, n in _read_rows(path)]
    return ev.SimilarityMap(tuple(entries))


def _report(cfg, root, jobs):
    edir = root / "evaluate"
    for name in ("errors.csv", "similarity.csv", "coverage.csv"):
        if not (edir / name).exists():
            raise MissingArtifact("evaluate", f"{edir / name} not found")
    records = read_records(edir / "errors.csv")
    exclusions = [ev.Exclusion(*row) for row in _read_rows(edir / "coverage.csv")]
    bundle = ev.assemble_report(records, read_similarity(edir / "similarity.csv"),
                                load_test_hashes(root), exclusions)
    ev.write_report(bundle, root / "report")


STAGE_FUNCS = {"simulate": _simulate, "prepare": _prepare, "train": _train,
               "evaluate": _evaluate, "report": _report}


def run_all(cfg: ExperimentConfig, root, *, force=False, jobs=1):
    ran = []
    for stage in STAGES:
        if run_stage(stage, cfg, root, force=force, jobs=jobs):
            ran.append(stage)
    return ran


def default_jobs() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
