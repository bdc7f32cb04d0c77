"""Comparison models: static and lagged least squares, MLPs, SimpleRNN.

Every model consumes the same :class:`~varnn.data.WindowSet` objects as
VARNN. Static models look only at the window's current covariates
``x_t``; lagged (ARX/NARX) models see the flattened window; SimpleRNN runs
over the ``w - 1`` context covariates.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numkit import Rng, ShapeError, activation, activation_grad, affine, glorot_init
from .params import ParamSet


class RankDeficiencyWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# closed-form least squares


@dataclass
class LinearFit:
    weights: np.ndarray
    intercept: float
    rank_deficient: bool = False

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def fit_linear_least_squares(X, y, ridge: float = 1e-10) -> LinearFit:
    """Minimise ``sum (y - X w - b)^2`` through the normal equations.

    A ridge of ``ridge`` on the diagonal keeps the system solvable; if the
    design is rank deficient a :class:`RankDeficiencyWarning` is emitted
    and the ridge solution is still returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"design has {X.shape[0]} rows but {y.shape[0]} targets")
    A = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
    rank = np.linalg.matrix_rank(A)
    deficient = rank < A.shape[1]
    if deficient:
        warnings.warn(
            f"design matrix has rank {rank} < {A.shape[1]} columns; returning the ridge solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    gram = A.T @ A + ridge * np.eye(A.shape[1])
    coef = np.linalg.solve(gram, A.T @ y)
    return LinearFit(coef[:-1], float(coef[-1]), deficient)


def build_lagged_design(windows):
    """Flatten each window into ``[x lags oldest-first; y lags oldest-first; x_t]``.

    Feature length is ``(w - 1) * (d + 1) + d``. Returns ``(features, targets)``.
    """
    w, d = windows.w, windows.d
    if w < 2:
        raise ValueError(f"window length must be >= 2, got {w}")
    n = windows.n
    x_lags = windows.xs[:, :-1, :].reshape(n, (w - 1) * d)
    y_lags = windows.ys_context
    features = np.concatenate([x_lags, y_lags, windows.x_current], axis=1)
    return features, windows.y_target.copy()


def lagged_width(w: int, d: int) -> int:
    return (w - 1) * (d + 1) + d


class _ClosedForm:
    frozen = ()
    trainable = False

    def __init__(self):
        self.fit_: Optional[LinearFit] = None

    def features(self, windows) -> np.ndarray:
        raise NotImplementedError

    def fit(self, windows) -> LinearFit:
        self.fit_ = fit_linear_least_squares(self.features(windows), windows.y_target)
        return self.fit_

    def predict(self, params, windows) -> np.ndarray:
        fit = params if params is not None else self.fit_
        return fit.predict(self.features(windows))


class StaticLinear(_ClosedForm):
    kind = "static_lr"
    name = "LR"

    def __init__(self, d: int):
        super().__init__()
        self.d = d

    def features(self, windows):
        return windows.x_current

    def count_parameters(self) -> int:
        return self.d + 1

    def count_macs(self, w: int) -> int:
        return self.d

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d}


class ArxLinear(_ClosedForm):
    kind = "arx_lr"
    name = "ARX-LR"

    def __init__(self, d: int, w: int):
        super().__init__()
        self.d, self.w = d, w

    def features(self, windows):
        return build_lagged_design(windows)[0]

    def count_parameters(self) -> int:
        return lagged_width(self.w, self.d) + 1

    def count_macs(self, w: int) -> int:
        return lagged_width(w, self.d)

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d, "w": self.w}


class TrainMean(_ClosedForm):
    """Predicts the mean training target everywhere."""

    kind = "mean"
    name = "Mean"

    def fit(self, windows) -> LinearFit:
        self.fit_ = LinearFit(np.zeros(0), float(np.mean(windows.y_target)))
        return self.fit_

    def features(self, windows):
        return np.zeros((windows.n, 0))

    def count_parameters(self) -> int:
        return 1

    def count_macs(self, w: int) -> int:
        return 0

    def describe(self) -> dict:
        return {"kind": self.kind}


# ---------------------------------------------------------------------------
# one-hidden-layer MLP (static or NARX features)


@dataclass
class MlpParams(ParamSet):
    W1: np.ndarray
    b1: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray


def mlp_forward(params: MlpParams, features: np.ndarray, act: str = "relu") -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != params.W1.shape[1]:
        raise ShapeError(f"MLP expects {params.W1.shape[1]} inputs, got {features.shape[-1]}")
    u = activation(act, affine(params.W1, params.b1, features))
    return affine(params.Wo, params.bo, u)[..., 0]


def narx_mlp_forward(params: MlpParams, windows, act: str = "relu") -> np.ndarray:
    return mlp_forward(params, build_lagged_design(windows)[0], act)


class MlpModel:
    """Hidden layer of width ``k`` and a linear head, on static or lagged features."""

    def __init__(self, d: int, w: int, k: int = 128, act: str = "relu", features: str = "static"):
        if features not in ("static", "narx"):
            raise ValueError("features must be 'static' or 'narx'")
        self.d, self.w, self.k, self.act, self.feature_kind = d, w, k, act, features
        self.n_in = d if features == "static" else lagged_width(w, d)

    frozen = ()
    trainable = True

    @property
    def kind(self) -> str:
        return "mlp" if self.feature_kind == "static" else "narx_mlp"

    @property
    def name(self) -> str:
        return "MLP" if self.feature_kind == "static" else "NARX-MLP"

    def features(self, windows) -> np.ndarray:
        if self.feature_kind == "static":
            return windows.x_current
        return build_lagged_design(windows)[0]

    def init_params(self, rng: Rng) -> MlpParams:
        return MlpParams(glorot_init(rng, self.k, self.n_in), np.zeros(self.k), glorot_init(rng, 1, self.k), np.zeros(1))

    def predict(self, params: MlpParams, windows) -> np.ndarray:
        return mlp_forward(params, self.features(windows), self.act)

    def loss_and_grads(self, params: MlpParams, windows):
        F = self.features(windows)
        a = affine(params.W1, params.b1, F)
        u = activation(self.act, a)
        y_hat = affine(params.Wo, params.bo, u)[:, 0]
        diff = y_hat - windows.y_target
        B = F.shape[0]
        g_y = 2.0 * diff / B
        g_a = np.outer(g_y, params.Wo[0]) * activation_grad(self.act, a, u)
        grads = MlpParams(g_a.T @ F, g_a.sum(axis=0), (g_y @ u)[None, :], np.array([g_y.sum()]))
        return float(np.mean(diff * diff)), grads

    def count_parameters(self) -> int:
        return self.k * self.n_in + 2 * self.k + 1

    def count_macs(self, w: int) -> int:
        return self.k * self.n_in + self.k

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d, "w": self.w, "k": self.k, "act": self.act}


# ---------------------------------------------------------------------------
# SimpleRNN


@dataclass(frozen=True)
class RnnSpec:
    d: int
    k: int = 128
    act: str = "relu"


@dataclass
class RnnParams(ParamSet):
    Wx: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray


def rnn_forward_batch(spec: RnnSpec, params: RnnParams, xs: np.ndarray):
    """Run over the first ``w - 1`` steps of ``xs`` (B, w, d).

    Returns ``(y_hat, pre, hs)`` where ``hs[0]`` is the zero state.
    """
    B, w, d = xs.shape
    if d != spec.d:
        raise ShapeError(f"RNN expects d={spec.d}, got {d}")
    hs = np.zeros((w, B, spec.k))
    pre = np.zeros((w - 1, B, spec.k))
    h = hs[0]
    for s in range(w - 1):
        a = affine(params.Wx, params.bh, xs[:, s, :]) + affine(params.Wh, None, h)
        h = activation(spec.act, a)
        pre[s] = a
        hs[s + 1] = h
    y_hat = affine(params.Wo, params.bo, h)[:, 0]
    return y_hat, pre, hs


def rnn_rollout(spec: RnnSpec, params: RnnParams, window) -> float:
    y_hat, _, _ = rnn_forward_batch(spec, params, np.asarray(window.xs, dtype=np.float64)[None])
    return float(y_hat[0])


class RnnModel:
    kind = "rnn"
    name = "RNN"
    frozen = ()
    trainable = True

    def __init__(self, spec: RnnSpec):
        self.spec = spec

    def init_params(self, rng: Rng) -> RnnParams:
        k, d = self.spec.k, self.spec.d
        return RnnParams(glorot_init(rng, k, d), glorot_init(rng, k, k), np.zeros(k), glorot_init(rng, 1, k), np.zeros(1))

    def predict(self, params: RnnParams, windows) -> np.ndarray:
        return rnn_forward_batch(self.spec, params, windows.xs)[0]

    def loss_and_grads(self, params: RnnParams, windows):
        y_hat, pre, hs = rnn_forward_batch(self.spec, params, windows.xs)
        diff = y_hat - windows.y_target
        B, w = windows.xs.shape[:2]
        grads = params.zeros_like()
        g_y = 2.0 * diff / B
        grads.Wo[0] = g_y @ hs[-1]
        grads.bo[0] = g_y.sum()
        g_h = np.outer(g_y, params.Wo[0])
        for s in range(w - 2, -1, -1):
            g_a = g_h * activation_grad(self.spec.act, pre[s], hs[s + 1])
            grads.Wx += g_a.T @ windows.xs[:, s, :]
            grads.Wh += g_a.T @ hs[s]
            grads.bh += g_a.sum(axis=0)
            g_h = g_a @ params.Wh
        return float(np.mean(diff * diff)), grads

    def count_parameters(self) -> int:
        k, d = self.spec.k, self.spec.d
        return k * d + k * k + k + k + 1

    def count_macs(self, w: int) -> int:
        k, d = self.spec.k, self.spec.d
        return (w - 1) * (k * d + k * k) + k

    def describe(self) -> dict:
        return {"kind": self.kind, **dataclasses.asdict(self.spec)}
