import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest
import yaml

from varnn import cli
from varnn.model import VarnnSpec, count_parameters

ROOT = Path(__file__).resolve().parents[1]
QUICKSTART = ROOT / "configs" / "quickstart.yaml"

TINY = {
    "name": "tiny",
    "dataset": {"synthetic": {"preset": "regime_shift", "T": 300, "d": 2, "seed": 3}},
    "models": [{"kind": "varnn", "variant": "RM", "k": 4}, {"kind": "static_lr"}],
    "train": {"max_epochs": 2},
}


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_train_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", str(write_cfg(tmp_path, TINY)), "--out", str(out)]) == 0
    for name in ("resolved_config.json", "report.json", "report.csv", "index.json", "scaler.json"):
        assert (out / name).exists(), name
    assert len(list((out / "params").glob("*.bin"))) == 1
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["config"]["window"] == {"w": 5, "stride": 1}
    assert resolved["config"]["train"]["max_epochs"] == 2


def test_rerun_same_report_hash(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    cli.main(["train", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["train", str(cfg), "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "index.json").read_text())["report_digest"]
    b = json.loads((tmp_path / "b" / "index.json").read_text())["report_digest"]
    assert a == b


def test_refuses_to_clobber(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "run"
    assert cli.main(["train", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["train", str(cfg), "--out", str(out)]) == cli.EXIT_EXISTS
    assert cli.main(["train", str(cfg), "--out", str(out), "--overwrite"]) == 0
    foreign = tmp_path / "foreign"
    foreign.mkdir()
    (foreign / "keep.txt").write_text("x")
    assert cli.main(["train", str(cfg), "--out", str(foreign), "--overwrite"]) == cli.EXIT_EXISTS
    assert (foreign / "keep.txt").exists()


def test_missing_dataset_path(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"dataset": {"csv": {"path": str(tmp_path / "absent.csv"), "target": "y"}}})
    assert cli.main(["train", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert "absent.csv" in capsys.readouterr().err


@pytest.mark.parametrize(
    "bad",
    [
        {"datasett": {}},
        {**TINY, "train": {"learning_rate": 1}},
        {**TINY, "window": {"w": 5, "stride": 1, "pad": 0}},
        {**TINY, "models": [{"kind": "transformer"}]},
        {**TINY, "models": [{"kind": "varnn", "hidden": 3}]},
    ],
)
def test_config_errors(tmp_path, bad):
    assert cli.main(["train", str(write_cfg(tmp_path, bad)), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert cli.main(["train", str(tmp_path / "none.yaml")]) == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    cfg = {**TINY, "models": [{"kind": "varnn", "variant": "ARM", "k": 4, "sigma": "relu", "rho": "relu"}], "train": {"lr": 1e300, "max_epochs": 5}}
    assert cli.main(["train", str(write_cfg(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGENCE


def test_evaluate_roundtrip(tmp_path):
    cfg = {**TINY, "models": TINY["models"][:1]}
    path = write_cfg(tmp_path, cfg)
    cli.main(["train", str(path), "--out", str(tmp_path / "t")])
    params = next((tmp_path / "t" / "params").glob("*.bin"))
    assert cli.main(["evaluate", str(path), "--params", str(params), "--out", str(tmp_path / "e")]) == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    report = json.loads((tmp_path / "t" / "report.json").read_text())
    assert metrics["test"] == pytest.approx(report["cells"][0]["test_mse"], rel=1e-12)


def test_gradcheck_suites(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert cli.main(["gradcheck", "--suite", "relu"]) == 0
    out = capsys.readouterr().out
    assert "tanh" in out and "relu" in out


def test_gradcheck_fault_hook(monkeypatch):
    monkeypatch.setenv(cli.FAULT_ENV, "flip_sign")
    assert cli.main(["gradcheck"]) == cli.EXIT_CHECK_FAILED


def test_ablate_memory_width_rows(tmp_path):
    cfg = {**TINY, "ablation": {"axis": "memory_width", "widths": [2, 4]}, "train": {"max_epochs": 1}}
    out = tmp_path / "abl"
    assert cli.main(["ablate", str(write_cfg(tmp_path, cfg)), "--out", str(out)]) == 0
    rows = (out / "report.csv").read_text().strip().splitlines()[1:]
    assert len(rows) == 3  # scalar, m=2, m=4


def test_ablate_variant_rows(tmp_path):
    out = tmp_path / "v"
    cfg = {**TINY, "train": {"max_epochs": 1}}
    assert cli.main(["ablate", str(write_cfg(tmp_path, cfg)), "--axis", "variant", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [c["model"] for c in report["cells"]] == ["VARNN-RM", "VARNN-RM+AM", "VARNN-ARM", "VARNN-ARM+AM"]


def test_bench_matches_counts(tmp_path):
    cfg = {"bench": {"w": 5, "specs": [{"variant": "RM", "d": 27, "m": 27, "k": 128}, {"variant": "ARM_AM", "d": 3, "m": 2, "k": 8}]}}
    out = tmp_path / "b"
    assert cli.main(["bench", str(write_cfg(tmp_path, cfg)), "--out", str(out)]) == 0
    rows = json.loads((out / "complexity.json").read_text())
    assert rows[0]["n_params"] == count_parameters(VarnnSpec("RM", d=27, m=27, k=128)) == 7223
    assert rows[0]["macs_per_window"] == 35308


def test_synth_writes_csv(tmp_path):
    cfg = write_cfg(tmp_path, {"dataset": {"synthetic": {"preset": "regime_shift", "T": 100, "d": 2}}})
    out = tmp_path / "s.csv"
    assert cli.main(["synth", str(cfg), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 101
    assert cli.main(["synth", str(cfg), "--out", str(out)]) == cli.EXIT_EXISTS


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert cli.main(["train", str(write_cfg(tmp_path, TINY))]) == 0
    runs = list((tmp_path / "root").iterdir())
    assert len(runs) == 1 and (runs[0] / "resolved_config.json").exists()


def test_quickstart_under_a_minute(tmp_path):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "varnn.cli", "train", str(QUICKSTART), "--out", str(tmp_path / "q")],
        capture_output=True, text=True, env={**os.environ},
    )
    assert proc.returncode == 0, proc.stderr
    assert time.perf_counter() - start < 60
