import json
import shutil
from pathlib import Path

import pytest
import yaml

from xferepi import cli
from xferepi.config import validate_config
from xferepi.stages import STAGES, sha256_file

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = CONFIGS / "small.yaml"


def write_config(tmp_path, **overrides):
    raw = yaml.safe_load(SMALL.read_text())
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        if name:
            raw.setdefault(section, {})[name] = value
        else:
            raw[section] = value
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert run("all", "--config", SMALL, "--out", root) == 0
    return root


def test_shipped_configs_validate():
    for path in sorted(CONFIGS.glob("*.yaml")):
        assert validate_config(path) == [], path


def test_validate_reports_every_problem(tmp_path, capsys):
    path = write_config(tmp_path, regimes=["rf_baseline", "nn_tradaboost"],
                        datasets__cutoffs=[10, 25], forest__n_trees=0)
    assert run("validate", "--config", path) == 2
    err = capsys.readouterr().err
    assert "regimes[1]" in err and "requires learner forest" in err
    # horizons up to 5 put the first usable target at index 13
    assert "datasets.cutoffs" in err and "13" in err
    assert "n_trees" in err


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    path = write_config(tmp_path, forest__n_tress=5)
    assert run("simulate", "--config", path, "--out", tmp_path / "r") == 2
    assert "n_tress" in capsys.readouterr().err


def test_missing_upstream_exits_3(tmp_path, capsys):
    assert run("train", "--config", SMALL, "--out", tmp_path) == 3
    assert "simulate" in capsys.readouterr().err


def test_bad_jobs_value(tmp_path):
    assert run("simulate", "--config", SMALL, "--out", tmp_path, "--jobs", "0") == 2


def test_all_writes_every_stage(small_run):
    manifest = json.loads((small_run / "manifest.json").read_text())
    assert set(manifest["stages"]) == set(STAGES)
    report = {p.name for p in (small_run / "report").iterdir()}
    assert {"errors.csv", "summary.csv", "best_models.csv", "similarity.csv",
            "summary.txt"} <= report


def test_manifest_lists_every_file_once(small_run):
    manifest = json.loads((small_run / "manifest.json").read_text())
    listed = [rel for e in manifest["stages"].values() for rel in e["artifacts"]]
    assert len(listed) == len(set(listed))
    on_disk = {p.relative_to(small_run).as_posix() for p in small_run.rglob("*")
               if p.is_file() and p.name != "manifest.json"}
    assert set(listed) == on_disk
    for e in manifest["stages"].values():
        for rel, digest in e["artifacts"].items():
            assert sha256_file(small_run / rel) == digest


def test_every_regime_is_scored(small_run):
    header, *rows = (small_run / "report" / "errors.csv").read_text().splitlines()
    regimes = {r.split(",")[0] for r in rows}
    assert regimes == {"rf_baseline", "nn_baseline", "rf_no_transfer", "nn_no_transfer",
                       "rf_tradaboost", "nn_transfer", "nn_finetuned"}


def test_second_run_does_nothing(small_run, capsys):
    before = {p: sha256_file(p) for p in small_run.rglob("*") if p.is_file()}
    assert run("all", "--config", SMALL, "--out", small_run) == 0
    assert "nothing" in capsys.readouterr().out
    after = {p: sha256_file(p) for p in small_run.rglob("*") if p.is_file()}
    assert before == after


def test_corrupted_artifact_reruns_downstream(small_run, tmp_path, capsys):
    root = tmp_path / "copy"
    shutil.copytree(small_run, root)
    records = next((root / "train").glob("h*/records.csv"))
    records.write_text(records.read_text() + "junk\n")
    assert run("all", "--config", SMALL, "--out", root) == 0
    out = capsys.readouterr().out
    assert "train" in out and "evaluate" in out and "report" in out
    assert "simulate" not in out
    assert (root / "report" / "errors.csv").read_bytes() == \
        (small_run / "report" / "errors.csv").read_bytes()


def test_config_change_only_reruns_affected_stages(small_run, tmp_path, capsys):
    root = tmp_path / "copy"
    shutil.copytree(small_run, root)
    path = write_config(tmp_path, regimes=["rf_baseline", "rf_no_transfer"])
    assert run("all", "--config", path, "--out", root) == 0
    out = capsys.readouterr().out
    assert "simulate" not in out and "prepare" not in out and "train" in out
    rows = (root / "report" / "errors.csv").read_text().splitlines()[1:]
    assert {r.split(",")[0] for r in rows} == {"rf_baseline", "rf_no_transfer"}


def test_same_seed_gives_identical_report(small_run, tmp_path):
    assert run("all", "--config", SMALL, "--out", tmp_path, "--jobs", "2") == 0
    for p in sorted((small_run / "report").iterdir()):
        assert (tmp_path / "report" / p.name).read_bytes() == p.read_bytes(), p.name
