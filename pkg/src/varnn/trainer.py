"""Adam training loop with early stopping, plus a finite-difference gradient checker."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .model import VarnnParams, VarnnSpec, WindowInstance, backward, rollout, squared_error
from .numkit import NonFiniteError, Rng
from .params import ParamSet

log = logging.getLogger(__name__)


class TrainingDivergence(ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 50
    restore_best: bool = True
    seed: int = 2025
    loss_target: str = "final_step_only"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size, max_epochs must be >= 1 and patience >= 0")
        if self.loss_target != "final_step_only":
            raise ValueError("only loss_target='final_step_only' is supported")

    @property
    def early_stopping_inert(self) -> bool:
        return self.patience >= self.max_epochs

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, cfg: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**cfg)


def loss(y_hat_t, y_t) -> float:
    """Mean squared error over whatever is passed (a scalar pair or a batch)."""
    return float(np.mean(squared_error(y_hat_t, y_t)))


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: ParamSet) -> "AdamState":
        t = params.tensors()
        return cls({k: np.zeros_like(a) for k, a in t.items()}, {k: np.zeros_like(a) for k, a in t.items()})


def adam_step(state: AdamState, params: ParamSet, grads: ParamSet, cfg: TrainConfig, frozen=()) -> None:
    """In-place Adam update with bias correction."""
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    g_all = grads.tensors()
    for name, theta in params.tensors().items():
        if name in frozen:
            continue
        g = g_all[name]
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)


@dataclass
class LearningCurve:
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    early_stopping_inert: bool = False

    def __len__(self) -> int:
        return len(self.train_mse)

    @property
    def epochs(self) -> List[int]:
        return list(range(1, len(self) + 1))

    def to_csv(self, path, include_wall: bool = True) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_mse", "val_mse", "wall_ms"] if include_wall else ["epoch", "train_mse", "val_mse"])
            for i, epoch in enumerate(self.epochs):
                row = [epoch, repr(self.train_mse[i]), repr(self.val_mse[i])]
                if include_wall:
                    row.append(f"{self.wall_ms[i]:.3f}")
                writer.writerow(row)

    def to_dict(self) -> dict:
        return {
            "train_mse": list(self.train_mse),
            "val_mse": list(self.val_mse),
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "early_stopping_inert": self.early_stopping_inert,
        }


def evaluate_mse(model, params, windows) -> float:
    return loss(model.predict(params, windows), windows.y_target)


def fit(model, train, val, cfg: TrainConfig, params: Optional[ParamSet] = None):
    """Train ``model`` on window set ``train``; early-stop on ``val``.

    ``model`` provides ``init_params(rng)``, ``predict(params, windows)``,
    ``loss_and_grads(params, windows)`` and a ``frozen`` tuple of tensor
    names that Adam must leave alone. Returns ``(params, curve)``; with
    ``cfg.restore_best`` the params are the snapshot from the epoch with the
    lowest validation MSE.
    """
    if train is None or len(train) == 0:
        raise ValueError("training window set is empty")
    if val is None or len(val) == 0:
        raise ValueError("validation window set is empty")
    root = Rng(cfg.seed)
    if params is None:
        params = model.init_params(root.spawn("init"))
    shuffle_rng = root.spawn("shuffle")
    state = AdamState.zeros(params)
    curve = LearningCurve(early_stopping_inert=cfg.early_stopping_inert)
    best_val = np.inf
    best_params = params.copy()
    wait = 0
    n = len(train)
    t0 = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = train.subset(order[lo : lo + cfg.batch_size])
            try:
                batch_loss, grads = model.loss_and_grads(params, batch)
            except NonFiniteError:
                raise TrainingDivergence(epoch, b, float("nan")) from None
            if not np.isfinite(batch_loss) or not grads.all_finite():
                raise TrainingDivergence(epoch, b, batch_loss)
            adam_step(state, params, grads, cfg, model.frozen)
        try:
            train_mse = evaluate_mse(model, params, train)
            val_mse = evaluate_mse(model, params, val)
        except NonFiniteError:
            raise TrainingDivergence(epoch, -1, float("nan")) from None
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise TrainingDivergence(epoch, -1, train_mse)
        curve.train_mse.append(train_mse)
        curve.val_mse.append(val_mse)
        curve.wall_ms.append((time.perf_counter() - t0) * 1e3)
        log.debug("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val = val_mse
            best_params = params.copy()
            curve.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                curve.stopped_early = epoch < cfg.max_epochs
                break
    if cfg.restore_best:
        params = best_params
    return params, curve


# ---------------------------------------------------------------------------
# gradient checking


def _window_loss(spec: VarnnSpec, params: VarnnParams, window: WindowInstance) -> float:
    return float(squared_error(rollout(spec, params, window).prediction[0], window.y_target))


def numeric_gradient(spec: VarnnSpec, params: VarnnParams, window: WindowInstance, step: float = 1e-6) -> VarnnParams:
    """Central differences of the window's squared error, one scalar at a time."""
    probe = params.copy()
    out = params.zeros_like()
    g_out = out.tensors()
    for name, theta in probe.tensors().items():
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + step
            plus = _window_loss(spec, probe, window)
            theta[idx] = old - step
            minus = _window_loss(spec, probe, window)
            theta[idx] = old
            g_out[name][idx] = (plus - minus) / (2.0 * step)
    return out


def max_relative_error(analytic: ParamSet, numeric: ParamSet, skip=()) -> float:
    worst = 0.0
    num = numeric.tensors()
    for name, ga in analytic.tensors().items():
        if name in skip:
            continue
        gn = num[name]
        err = np.abs(ga - gn) / np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gn)))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def grad_check(spec: VarnnSpec, params: VarnnParams, window: WindowInstance, step: float = 1e-6, _fault=None) -> float:
    """Max over scalars of ``|g_a - g_fd| / max(1, |g_a|, |g_fd|)``.

    Frozen tensors (scalar-residual mode) are excluded since their analytic
    gradient is zeroed by design. ``_fault`` lets tests corrupt the analytic
    gradient to prove the check can fail.
    """
    analytic = backward(spec, params, window, rollout(spec, params, window))
    if _fault is not None:
        analytic = _fault(analytic)
    numeric = numeric_gradient(spec, params, window, step)
    return max_relative_error(analytic, numeric, skip=spec.frozen)


def relu_margin(spec: VarnnSpec, params: VarnnParams, window: WindowInstance) -> float:
    """Smallest |pre-activation| feeding a ReLU in this rollout (inf if none)."""
    trace = rollout(spec, params, window)
    margins = [np.inf]
    if spec.sigma == "relu":
        margins.append(float(np.abs(trace.a).min()))
    if spec.memory_activation == "relu" and not spec.no_residual:
        margins.append(float(np.abs(trace.p).min()))
    return min(margins)


def random_check_case(rng: Rng, spec: VarnnSpec, scale: float = 0.8, w: int = 5):
    """Random params (biases included) and window for gradient checks."""
    from .model import init_params

    params = init_params(spec, rng)
    for name, t in params.tensors().items():
        if name in spec.frozen:
            continue
        t[...] = rng.normal(t.shape, std=scale)
    window = WindowInstance(rng.normal((w, spec.d)), rng.normal(w - 1), float(rng.normal(1)[0]))
    return params, window


def sample_relu_case(rng: Rng, spec: VarnnSpec, w: int, margin: float = 1e-3, max_tries: int = 1000):
    """Rejection-sample a case whose ReLU inputs stay ``margin`` away from 0."""
    for _ in range(max_tries):
        params, window = random_check_case(rng, spec, w=w)
        if relu_margin(spec, params, window) > margin:
            return params, window
    raise RuntimeError(f"no kink-free ReLU case found in {max_tries} tries for {spec}")
