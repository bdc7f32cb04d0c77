"""Comparison and ablation runs over a shared set of windows.

Every cell of a plan (one model, one seed, one ablation value) trains on
the same :class:`~varnn.data.PreparedData`, and the window fingerprint is
stored with each cell so protocol identity can be checked afterwards.

Reports are split in two: ``report.json``/``report.csv`` hold only
deterministic quantities (so reruns are byte-identical), while
``timings.json`` and the ``wall_ms`` column of the curve CSVs hold
wall-clock measurements.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import baselines
from .data import PreparedData, SplitSpec, generate_synthetic, load_csv, prepare, synthetic_spec_from_dict
from .model import VarnnModel, VarnnSpec, count_parameters, resolve_memory_width
from .numkit import Rng
from .reference import scalar_rollout
from .trainer import LearningCurve, TrainConfig, evaluate_mse, fit

log = logging.getLogger(__name__)

DEFAULT_MEMORY_WIDTHS = (4, 8, 16, 32, 64, "2d_cap128", "d")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# datasets and models from config


def dataset_from_config(cfg: dict):
    """``{"synthetic": {...}}`` or ``{"csv": {"path": ..., "target": ...}}``."""
    if "synthetic" in cfg:
        return generate_synthetic(synthetic_spec_from_dict(cfg["synthetic"]))
    if "csv" in cfg:
        c = dict(cfg["csv"])
        return load_csv(
            c.pop("path"),
            target_column=c.pop("target"),
            feature_columns=c.pop("features", None),
            timestamp_column=c.pop("timestamp", None),
            exclude_columns=c.pop("exclude", ()),
            group_column=c.pop("group", None),
            name=c.pop("name", None),
        )
    raise KeyError("dataset config needs a 'synthetic' or 'csv' section")


def build_model(cfg: dict, d: int, w: int):
    cfg = dict(cfg)
    kind = cfg.pop("kind", "varnn")
    if kind == "varnn":
        cfg.setdefault("m", "d")
        return VarnnModel(VarnnSpec.from_dict(cfg, d=d))
    if kind == "static_lr":
        return baselines.StaticLinear(d)
    if kind == "arx_lr":
        return baselines.ArxLinear(d, w)
    if kind == "mean":
        return baselines.TrainMean()
    if kind in ("mlp", "narx_mlp"):
        return baselines.MlpModel(d, w, k=cfg.pop("k", 128), act=cfg.pop("act", "relu"), features="static" if kind == "mlp" else "narx")
    if kind == "rnn":
        return baselines.RnnModel(baselines.RnnSpec(d=d, k=cfg.pop("k", 128), act=cfg.pop("act", "relu")))
    raise ValueError(f"unknown model kind {kind!r}")


def comparison_models(k: int = 128) -> List[dict]:
    """The in-scope rows of the main comparison table."""
    return [
        {"kind": "static_lr"},
        {"kind": "mlp", "k": k},
        {"kind": "arx_lr"},
        {"kind": "narx_mlp", "k": k},
        {"kind": "rnn", "k": k},
        {"kind": "varnn", "variant": "RM", "k": k},
        {"kind": "varnn", "variant": "RM_AM", "k": k},
    ]


# ---------------------------------------------------------------------------
# report types


@dataclass
class CellResult:
    cell_id: str
    model: str
    model_config: dict
    seed: int
    train_mse: float
    val_mse: float
    test_mse: float
    n_params: int
    macs_per_window: int
    window_hash: str
    curve: Optional[LearningCurve] = None
    ablation: Optional[dict] = None
    wall_s: float = 0.0
    test_true: Optional[np.ndarray] = None
    test_pred: Optional[np.ndarray] = None
    params: object = None

    def row(self) -> dict:
        out = {
            "cell_id": self.cell_id,
            "model": self.model,
            "seed": self.seed,
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "test_mse": self.test_mse,
            "n_params": self.n_params,
            "macs_per_window": self.macs_per_window,
        }
        if self.ablation:
            out.update({f"ablation_{k}": v for k, v in self.ablation.items()})
        return out

    def to_dict(self) -> dict:
        out = self.row()
        out["model_config"] = self.model_config
        out["window_hash"] = self.window_hash
        out["best_epoch"] = self.curve.best_epoch if self.curve else None
        out["early_stopping_inert"] = self.curve.early_stopping_inert if self.curve else None
        out["curve"] = self.curve.to_dict() if self.curve else None
        return out

    def rescored_test_mse(self) -> float:
        return float(np.mean((self.test_true - self.test_pred) ** 2))


@dataclass
class ExperimentPlan:
    data: PreparedData
    models: List[dict]
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: Sequence[int] = (2025,)
    axis: Optional[str] = None
    name: str = "plan"


@dataclass
class ExperimentReport:
    name: str
    dataset: str
    config: dict
    cells: List[CellResult] = field(default_factory=list)

    def by_model(self, model: str) -> List[CellResult]:
        return [c for c in self.cells if c.model == model]

    def median_test(self, model: str) -> float:
        return float(np.median([c.test_mse for c in self.by_model(model)]))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def write(self, out_dir) -> Dict[str, str]:
        """Write report, curves and predictions; return the artifact index."""
        out = Path(out_dir)
        (out / "curves").mkdir(parents=True, exist_ok=True)
        (out / "predictions").mkdir(parents=True, exist_ok=True)
        artifacts = {}
        (out / "report.json").write_text(self.to_json())
        artifacts["report.json"] = "report"
        rows = [c.row() for c in self.cells]
        if rows:
            keys = list(dict.fromkeys(k for r in rows for k in r))
            with (out / "report.csv").open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=keys)
                writer.writeheader()
                for r in rows:
                    writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
            artifacts["report.csv"] = "report"
        timings = {c.cell_id: c.wall_s for c in self.cells}
        (out / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2))
        artifacts["timings.json"] = "timings"
        for c in self.cells:
            if c.curve is not None:
                path = f"curves/{c.cell_id}.csv"
                c.curve.to_csv(out / path)
                artifacts[path] = "curve"
            if c.test_pred is not None:
                path = f"predictions/{c.cell_id}.csv"
                write_predictions(out / path, c.test_true, c.test_pred)
                artifacts[path] = "predictions"
        index = {
            "config_hash": config_hash(self.config),
            "report_digest": self.digest(),
            "artifacts": {p: {"type": t, "cell_config_hash": None} for p, t in artifacts.items()},
        }
        for c in self.cells:
            h = config_hash({"model": c.model_config, "seed": c.seed, "ablation": c.ablation})
            for p in (f"curves/{c.cell_id}.csv", f"predictions/{c.cell_id}.csv"):
                if p in index["artifacts"]:
                    index["artifacts"][p]["cell_config_hash"] = h
        (out / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2))
        return {p: v["type"] for p, v in index["artifacts"].items()}


def write_predictions(path, y_true, y_pred) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "y_true", "y_pred"])
        for i, (a, b) in enumerate(zip(y_true, y_pred)):
            writer.writerow([i, repr(float(a)), repr(float(b))])


def read_predictions(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["y_true"]) for r in rows]), np.array([float(r["y_pred"]) for r in rows])


# ---------------------------------------------------------------------------
# running


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in text).strip("-").lower()


def run_cell(model_cfg: dict, data: PreparedData, cfg: TrainConfig, seed: int, ablation: Optional[dict] = None) -> CellResult:
    w = data.w
    model = build_model(model_cfg, data.dataset.d, w)
    train, val, test = data.windows["train"], data.windows.get("val"), data.windows["test"]
    t0 = time.perf_counter()
    curve = None
    if getattr(model, "trainable", True):
        params, curve = fit(model, train, val, cfg.replace(seed=seed))
    else:
        params = model.fit(train)
    wall = time.perf_counter() - t0
    pred = model.predict(params, test)
    tag = "" if not ablation else "-" + "-".join(f"{k}={v}" for k, v in ablation.items())
    return CellResult(
        cell_id=_slug(f"{model.name}{tag}-seed{seed}"),
        model=model.name,
        model_config=model.describe(),
        seed=seed,
        train_mse=evaluate_mse(model, params, train),
        val_mse=evaluate_mse(model, params, val) if val is not None else float("nan"),
        test_mse=float(np.mean((test.y_target - pred) ** 2)),
        n_params=model.count_parameters(),
        macs_per_window=model.count_macs(w),
        window_hash=data.fingerprint(),
        curve=curve,
        ablation=ablation,
        wall_s=wall,
        test_true=test.y_target.copy(),
        test_pred=pred,
        params=params,
    )


def _plan_config(plan: ExperimentPlan, extra: Optional[dict] = None) -> dict:
    cfg = {
        "models": plan.models,
        "train": dataclasses.asdict(plan.train),
        "seeds": list(plan.seeds),
        "axis": plan.axis,
        "w": plan.data.w,
        "stride": plan.data.stride,
        "boundaries": {k: list(v) for k, v in plan.data.boundaries.items()},
        "window_hash": plan.data.fingerprint(),
    }
    if extra:
        cfg.update(extra)
    return cfg


def run_plan(plan: ExperimentPlan, ablation_values: Optional[List[dict]] = None) -> ExperimentReport:
    """Train every (model, seed) cell; ``ablation_values`` optionally tags each model entry."""
    report = ExperimentReport(plan.name, plan.data.dataset.name, _plan_config(plan))
    for i, model_cfg in enumerate(plan.models):
        ablation = ablation_values[i] if ablation_values else None
        for seed in plan.seeds:
            cell = run_cell(model_cfg, plan.data, plan.train, seed, ablation)
            log.info("%s test_mse=%.6g", cell.cell_id, cell.test_mse)
            report.cells.append(cell)
    hashes = {c.window_hash for c in report.cells}
    if len(hashes) > 1:
        raise RuntimeError("cells in one plan saw different window sets")
    return report


def run_table2(plan: ExperimentPlan) -> ExperimentReport:
    return run_plan(plan)


def run_memory_width_sweep(
    data: PreparedData,
    widths: Sequence = DEFAULT_MEMORY_WIDTHS,
    base: Optional[dict] = None,
    train: TrainConfig = TrainConfig(),
    seeds: Sequence[int] = (2025,),
    include_scalar: bool = True,
) -> ExperimentReport:
    """VARNN-RM with a scalar residual and each projected memory width."""
    base = dict(base or {"kind": "varnn", "variant": "RM"})
    d = data.dataset.d
    models, tags = [], []
    if include_scalar:
        models.append({**base, "m": 1, "scalar_residual": True})
        tags.append({"memory": "scalar", "m": 1})
    seen = set()
    for token in widths:
        m = resolve_memory_width(token, d)
        if m in seen:
            continue
        seen.add(m)
        models.append({**base, "m": m})
        tags.append({"memory": str(token), "m": m})
    plan = ExperimentPlan(data, models, train, seeds, axis="memory_width", name="memory_width_sweep")
    return run_plan(plan, tags)


def run_residual_effect(data: PreparedData, base: Optional[dict] = None, train: TrainConfig = TrainConfig(), seeds: Sequence[int] = (2025,)) -> ExperimentReport:
    base = dict(base or {"kind": "varnn"})
    models = [
        {**base, "variant": "RM", "no_residual": True},
        {**base, "variant": "RM"},
        {**base, "variant": "ARM"},
    ]
    tags = [{"residual": "none"}, {"residual": "RM"}, {"residual": "ARM"}]
    plan = ExperimentPlan(data, models, train, seeds, axis="residual_mode", name="residual_effect")
    return run_plan(plan, tags)


def run_activation_ablation(data: PreparedData, base: Optional[dict] = None, train: TrainConfig = TrainConfig(), seeds: Sequence[int] = (2025,)) -> ExperimentReport:
    base = dict(base or {"kind": "varnn", "variant": "RM"})
    models = [{**base, "rho": "relu"}, {**base, "rho": "tanh"}]
    plan = ExperimentPlan(data, models, train, seeds, axis="activation", name="activation_ablation")
    return run_plan(plan, [{"rho": "relu"}, {"rho": "tanh"}])


def run_variant_comparison(data: PreparedData, base: Optional[dict] = None, train: TrainConfig = TrainConfig(), seeds: Sequence[int] = (2025,)) -> ExperimentReport:
    base = dict(base or {"kind": "varnn"})
    variants = ["RM", "RM_AM", "ARM", "ARM_AM"]
    models = [{**base, "variant": v} for v in variants]
    plan = ExperimentPlan(data, models, train, seeds, axis="variant", name="variant_comparison")
    return run_plan(plan, [{"variant": v} for v in variants])


ABLATIONS: Dict[str, Callable] = {
    "memory_width": run_memory_width_sweep,
    "residual_mode": run_residual_effect,
    "activation": run_activation_ablation,
    "variant": run_variant_comparison,
}


def curve_volatility(values: Sequence[float]) -> float:
    """Variance of epoch-to-epoch changes; 0 for curves shorter than 3."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return float(np.var(diffs)) if diffs.size > 1 else 0.0


# ---------------------------------------------------------------------------
# complexity accounting


def instrumented_macs(spec: VarnnSpec, w: int) -> int:
    """Count multiplies by running the scalar reference on a zero window."""
    from .model import WindowInstance, zero_params

    window = WindowInstance(np.zeros((w, spec.d)), np.zeros(w - 1))
    return scalar_rollout(spec, zero_params(spec), window)[2]


def emit_complexity_report(specs: Sequence[VarnnSpec], w: int = 5, rnn_k: Optional[int] = None) -> List[dict]:
    """Parameter and MAC counts per spec, with the covariate-only overhead
    and (optionally) a SimpleRNN of width ``rnn_k`` for contrast."""
    rows = []
    rnn_dims = set()
    for spec in specs:
        # covariate-only predictor: fusion of width d, no memory tensors
        ff_params = spec.k * spec.d + 2 * spec.k + 1
        row = {
            "model": "VARNN-" + spec.variant.replace("_", "+"),
            "d": spec.d,
            "m": spec.m,
            "k": spec.k,
            "w": w,
            "n_params": count_parameters(spec),
            "overhead_vs_feedforward": count_parameters(spec) - ff_params,
            "macs_per_window": VarnnModel(spec).count_macs(w),
            "macs_instrumented": instrumented_macs(spec, w),
            "macs_per_step": spec.k * spec.fusion_width + spec.k + spec.m + (spec.m * spec.m if spec.accumulative else 0),
        }
        rows.append(row)
        if rnn_k and spec.d not in rnn_dims:
            rnn_dims.add(spec.d)
            rnn = baselines.RnnModel(baselines.RnnSpec(d=spec.d, k=rnn_k))
            rows.append(
                {
                    "model": "RNN",
                    "d": spec.d,
                    "m": 0,
                    "k": rnn_k,
                    "w": w,
                    "n_params": rnn.count_parameters(),
                    "overhead_vs_feedforward": None,
                    "macs_per_window": rnn.count_macs(w),
                    "macs_instrumented": None,
                    "macs_per_step": rnn_k * spec.d + rnn_k * rnn_k,
                }
            )
    return rows


def prepare_from_config(cfg: dict, w: int = 5, stride: int = 1, split: SplitSpec = SplitSpec()) -> PreparedData:
    return prepare(dataset_from_config(cfg), w, stride, split)


def teacher_series(spec: VarnnSpec, T: int, w: int = 5, seed: int = 0, params=None):
    """A series whose target is exactly a VARNN function of its own window.

    Covariates are uniform on [0, 1]; the first ``w - 1`` targets are
    uniform too, after which ``y_t`` is the teacher's prediction for the
    window ending at ``t`` (context targets being earlier teacher outputs).
    Returns ``(X, y, teacher_params)``.
    """
    from .model import init_params, predict

    rng = Rng(seed)
    if params is None:
        params = init_params(spec, rng.spawn("teacher"))
    X = rng.spawn("x").uniform((T, spec.d))
    y = np.zeros(T)
    y[: w - 1] = rng.spawn("y0").uniform(w - 1)
    for t in range(w - 1, T):
        y[t] = predict(spec, params, X[None, t - w + 1 : t + 1], y[None, t - w + 1 : t])[0]
    return X, y, params
