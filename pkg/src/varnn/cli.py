"""Command-line front end.

Everything that affects results lives in the YAML/JSON config file; flags
only pick the command, paths and verbosity. Each run writes its resolved
config as ``resolved_config.json`` next to its outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
divergence, 5 gradient check failed, 6 output exists (use --overwrite).
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import serialize
from .data import DataError, SplitSpec, generate_synthetic, prepare, save_csv, synthetic_spec_from_dict
from .experiments import (
    ABLATIONS,
    ExperimentPlan,
    build_model,
    config_hash,
    dataset_from_config,
    emit_complexity_report,
    run_plan,
    write_predictions,
)
from .model import VARIANTS, VarnnModel, VarnnParams, VarnnSpec, count_parameters, init_params
from .numkit import Rng
from .trainer import TrainConfig, TrainingDivergence, grad_check, random_check_case, sample_relu_case

log = logging.getLogger("varnn")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_CHECK_FAILED = 5
EXIT_EXISTS = 6

OUTPUT_ROOT_ENV = "VARNN_OUTPUT_ROOT"
FAULT_ENV = "VARNN_GRADCHECK_FAULT"

DEFAULTS = {
    "name": "run",
    "dataset": None,
    "window": {"w": 5, "stride": 1},
    "split": {"train_fraction": 0.8, "val_fraction": 0.2},
    "models": [{"kind": "varnn", "variant": "RM", "k": 128, "m": "d"}],
    "train": {},
    "seeds": [2025],
    "ablation": {},
    "gradcheck": {
        "n_cases": 100,
        "activation": "tanh",
        "step": 1e-6,
        "tolerance": None,
        "seed": 0,
        "dims": [1, 2, 4],
        "windows": [2, 3, 5],
    },
    "bench": {"w": 5, "specs": None, "rnn_k": 128},
}
_SECTIONS = {"window": {"w", "stride"}, "split": {"train_fraction", "val_fraction"},
             "ablation": {"axis", "widths", "base"},
             "gradcheck": set(DEFAULTS["gradcheck"]), "bench": set(DEFAULTS["bench"])}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key in _SECTIONS:
            bad = set(value or {}) - _SECTIONS[key]
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
            cfg[key].update(value or {})
        else:
            cfg[key] = value
    try:
        cfg["train"] = dataclasses.asdict(TrainConfig.from_dict(cfg["train"] or {}))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None
    return cfg


def _output_dir(args, cfg: dict, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{command}-{cfg.get('name', 'run')}-{config_hash(cfg)}"


def _claim_output(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {out} is not empty; pass --overwrite to replace it")
        if not (out / "resolved_config.json").exists():
            raise FileExistsError(f"refusing to clear {out}: it does not look like a previous run directory")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _write_resolved(out: Path, cfg: dict, command: str) -> None:
    doc = {"command": command, "config": cfg, "config_hash": config_hash(cfg)}
    (out / "resolved_config.json").write_text(json.dumps(doc, sort_keys=True, indent=2))


def _prepared(cfg: dict):
    if not cfg.get("dataset"):
        raise ConfigError("config needs a 'dataset' section")
    try:
        dataset = dataset_from_config(cfg["dataset"])
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    split = SplitSpec(**cfg["split"])
    data = prepare(dataset, cfg["window"]["w"], cfg["window"]["stride"], split)
    for model_cfg in cfg["models"]:
        try:
            build_model(model_cfg, dataset.d, data.w)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"models: {exc}") from None
    return data


def cmd_train(args, cfg: dict) -> int:
    data = _prepared(cfg)
    out = _output_dir(args, cfg, "train")
    _claim_output(out, args.overwrite)
    _write_resolved(out, cfg, "train")
    plan = ExperimentPlan(data, cfg["models"], TrainConfig(**cfg["train"]), cfg["seeds"], name=cfg["name"])
    report = run_plan(plan)
    report.write(out)
    (out / "params").mkdir(exist_ok=True)
    for cell in report.cells:
        if cell.params is not None and hasattr(cell.params, "tensors"):
            serialize.save(cell.params, out / "params" / f"{cell.cell_id}.bin")
    (out / "scaler.json").write_text(json.dumps(data.scaler.to_dict(), indent=2))
    for cell in report.cells:
        print(f"{cell.model:>18s} seed={cell.seed} train={cell.train_mse:.6g} test={cell.test_mse:.6g}")
    if any(c.curve is not None and c.curve.early_stopping_inert for c in report.cells):
        print("note: patience >= max_epochs, early stopping inert")
    print(f"report digest {report.digest()}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_evaluate(args, cfg: dict) -> int:
    data = _prepared(cfg)
    if len(cfg["models"]) != 1 or cfg["models"][0].get("kind", "varnn") != "varnn":
        raise ConfigError("evaluate needs exactly one varnn model in 'models'")
    model = build_model(cfg["models"][0], data.dataset.d, data.w)
    params = serialize.load(VarnnParams, args.params)
    params.check(model.spec)
    out = _output_dir(args, cfg, "evaluate")
    _claim_output(out, args.overwrite)
    _write_resolved(out, cfg, "evaluate")
    metrics = {}
    for name, windows in data.windows.items():
        pred = model.predict(params, windows)
        metrics[name] = float(np.mean((windows.y_target - pred) ** 2))
        write_predictions(out / f"predictions_{name}.csv", windows.y_target, pred)
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    for name, v in metrics.items():
        print(f"{name:>6s} mse={v:.6g}")
    return EXIT_OK


def cmd_ablate(args, cfg: dict) -> int:
    axis = args.axis or cfg["ablation"].get("axis")
    if axis not in ABLATIONS:
        raise ConfigError(f"ablation axis must be one of {sorted(ABLATIONS)}, got {axis!r}")
    data = _prepared(cfg)
    out = _output_dir(args, cfg, f"ablate-{axis}")
    _claim_output(out, args.overwrite)
    _write_resolved(out, cfg, f"ablate {axis}")
    base = cfg["ablation"].get("base") or dict(cfg["models"][0])
    kwargs = {"base": base, "train": TrainConfig(**cfg["train"]), "seeds": cfg["seeds"]}
    if axis == "memory_width" and cfg["ablation"].get("widths"):
        kwargs["widths"] = cfg["ablation"]["widths"]
    report = ABLATIONS[axis](data, **kwargs)
    report.write(out)
    for cell in report.cells:
        tag = ",".join(f"{k}={v}" for k, v in (cell.ablation or {}).items())
        print(f"{tag:>28s} seed={cell.seed} train={cell.train_mse:.6g} test={cell.test_mse:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def _flip_sign(grads):
    flipped = grads.copy()
    for t in flipped.tensors().values():
        t *= -1.0
    return flipped


def run_gradcheck_suite(gc: dict, fault=None):
    """Random VARNN cases across variants and sizes; yields (spec, w, error)."""
    rng = Rng(int(gc["seed"]))
    act = gc["activation"]
    dims, windows = list(gc["dims"]), list(gc["windows"])
    for _ in range(int(gc["n_cases"])):
        pick = rng.uniform(5)
        spec = VarnnSpec(
            variant=VARIANTS[int(pick[0] * len(VARIANTS))],
            d=dims[int(pick[1] * len(dims))],
            m=dims[int(pick[2] * len(dims))],
            k=dims[int(pick[3] * len(dims))],
            sigma=act,
            rho=act,
        )
        w = windows[int(pick[4] * len(windows))]
        if act == "relu":
            params, window = sample_relu_case(rng, spec, w)
        else:
            params, window = random_check_case(rng, spec, w=w)
        yield spec, w, grad_check(spec, params, window, float(gc["step"]), _fault=fault)


def cmd_gradcheck(args, cfg: dict) -> int:
    gc = dict(cfg["gradcheck"])
    if args.suite:
        gc["activation"] = args.suite
    tol = gc["tolerance"] or (1e-5 if gc["activation"] == "tanh" else 1e-4)
    fault = _flip_sign if os.environ.get(FAULT_ENV) == "flip_sign" else None
    worst = 0.0
    failures = 0
    for spec, w, err in run_gradcheck_suite(gc, fault):
        worst = max(worst, err)
        status = "ok" if err <= tol else "FAIL"
        failures += status == "FAIL"
        if args.verbose or status == "FAIL":
            print(f"{status} {spec.variant:6s} d={spec.d} m={spec.m} k={spec.k} w={w} max_rel_err={err:.3e}")
    print(f"gradcheck {gc['activation']}: {gc['n_cases']} cases, max relative error {worst:.3e} (tolerance {tol:g})")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


def cmd_bench(args, cfg: dict) -> int:
    bench = cfg["bench"]
    w = int(bench["w"])
    specs_cfg = bench["specs"] or [{"variant": v, "d": 27, "m": 27, "k": 128} for v in VARIANTS]
    try:
        specs = [VarnnSpec.from_dict(s) for s in specs_cfg]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bench.specs: {exc}") from None
    rows = emit_complexity_report(specs, w, rnn_k=bench.get("rnn_k"))
    mismatches = 0
    for spec in specs:
        blob = serialize.to_bytes(init_params(spec, Rng(0)))
        if serialize.count_serialized_scalars(blob) != count_parameters(spec):
            mismatches += 1
    for row in rows:
        if row["macs_instrumented"] is not None and row["macs_instrumented"] != row["macs_per_window"]:
            mismatches += 1
    out = _output_dir(args, cfg, "bench")
    _claim_output(out, args.overwrite)
    _write_resolved(out, cfg, "bench")
    keys = list(rows[0])
    lines = [",".join(keys)] + [",".join("" if r[k] is None else str(r[k]) for k in keys) for r in rows]
    (out / "complexity.csv").write_text("\n".join(lines) + "\n")
    (out / "complexity.json").write_text(json.dumps(rows, indent=2))
    print("\n".join(lines))
    if mismatches:
        print(f"{mismatches} count mismatches")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_synth(args, cfg: dict) -> int:
    ds_cfg = cfg.get("dataset") or {}
    if "synthetic" not in ds_cfg:
        raise ConfigError("synth needs dataset.synthetic in the config")
    try:
        spec = synthetic_spec_from_dict(ds_cfg["synthetic"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"dataset.synthetic: {exc}") from None
    dataset = generate_synthetic(spec)
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / f"synth-{config_hash(cfg)}.csv"
    if out.exists() and not args.overwrite:
        raise FileExistsError(f"{out} exists; pass --overwrite to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(dataset, out)
    meta = out.with_suffix(".meta.json")
    meta.write_text(json.dumps({"config": cfg, **dataset.metadata}, sort_keys=True, indent=2))
    print(f"wrote {out} (T={dataset.T}, d={dataset.d})")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varnn", description="VARNN training, ablation and verification harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?" if name in ("gradcheck", "bench") else None, help="YAML or JSON config file")
        p.add_argument("--out", help=f"output path (default: ${OUTPUT_ROOT_ENV}/<command>-<hash>)")
        p.add_argument("--overwrite", action="store_true", help="replace an existing output")
        if name == "evaluate":
            p.add_argument("--params", required=True, help="parameter file (.bin or .json)")
        if name == "ablate":
            p.add_argument("--axis", choices=sorted(ABLATIONS))
        if name == "gradcheck":
            p.add_argument("--suite", choices=["tanh", "relu"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else resolve_config({})
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS


if __name__ == "__main__":
    sys.exit(main())
