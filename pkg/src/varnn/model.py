"""VARNN: windowed regression with a residual (innovation) memory.

For a window of length ``w`` the model runs ``w - 1`` teacher-forced
context steps and one final predictor-only step:

    z_s = [x_s; h_{s-1}]              (+ u_{s-1} for the AM variants)
    u_s = sigma(Wz z_s + bz)
    y_s = Wo u_s + bo
    e_s = y_true_s - y_s              (context steps only)
    h_s = rho(We e_s + be)            RM / RM_AM
    h_s = rho(We e_s + Wh h_{s-1} + be)   ARM / ARM_AM

``h_0`` and ``u_0`` are zero for every window. All batched arrays carry
the batch on axis 0, except traces which are indexed ``[step, batch, ...]``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import numkit
from .numkit import Rng, ShapeError, activation, activation_grad, affine, glorot_init
from .params import ParamSet

VARIANTS = ("RM", "RM_AM", "ARM", "ARM_AM")
_VARIANT_ALIASES = {"RM+AM": "RM_AM", "ARM+AM": "ARM_AM"}


class VariantMismatchError(ValueError):
    pass


class TraceMismatchError(ValueError):
    """A trace was not produced from the window it is paired with."""


def canonical_variant(name: str) -> str:
    name = _VARIANT_ALIASES.get(name.upper(), name.upper())
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


def resolve_memory_width(token: Union[int, str], d: int) -> int:
    """Resolve a memory-width sweep token: an int, ``"d"`` or ``"2d_cap128"``."""
    if isinstance(token, str):
        if token == "d":
            return d
        if token == "2d_cap128":
            return min(128, 2 * d)
        if token.isdigit():
            return int(token)
        raise ValueError(f"unknown memory width token {token!r}")
    return int(token)


@dataclass(frozen=True)
class VarnnSpec:
    variant: str = "RM"
    d: int = 1
    m: int = 1
    k: int = 128
    sigma: str = "relu"
    rho: str = "relu"
    scalar_residual: bool = False
    # Ablation switch: the predictor always sees a zero residual state.
    no_residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.scalar_residual and self.m != 1:
            object.__setattr__(self, "m", 1)
        for name in ("d", "m", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("sigma", "rho"):
            if getattr(self, name) not in numkit.ACTIVATIONS:
                raise ValueError(f"{name} must be one of {numkit.ACTIVATIONS}")

    @property
    def activation_memory(self) -> bool:
        return self.variant in ("RM_AM", "ARM_AM")

    @property
    def accumulative(self) -> bool:
        return self.variant in ("ARM", "ARM_AM")

    @property
    def fusion_width(self) -> int:
        return self.d + self.m + (self.k if self.activation_memory else 0)

    @property
    def memory_activation(self) -> str:
        # The scalar ablation carries e_s itself, so no squashing.
        return "identity" if self.scalar_residual else self.rho

    @property
    def frozen(self) -> tuple:
        return ("We", "be") if self.scalar_residual else ()

    def replace(self, **changes) -> "VarnnSpec":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, cfg: dict, d: Optional[int] = None) -> "VarnnSpec":
        cfg = dict(cfg)
        if d is not None:
            cfg.setdefault("d", d)
        cfg["m"] = resolve_memory_width(cfg.get("m", "d"), cfg["d"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise KeyError(f"unknown VARNN spec keys: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class VarnnParams(ParamSet):
    Wz: np.ndarray
    bz: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray
    We: np.ndarray
    be: np.ndarray
    Wh: Optional[np.ndarray] = None

    def check(self, spec: VarnnSpec) -> None:
        expected = expected_shapes(spec)
        got = {k: v.shape for k, v in self.tensors().items()}
        if got != expected:
            raise ShapeError(f"parameter shapes {got} do not match spec {expected}")


def expected_shapes(spec: VarnnSpec) -> dict:
    shapes = {
        "Wz": (spec.k, spec.fusion_width),
        "bz": (spec.k,),
        "Wo": (1, spec.k),
        "bo": (1,),
        "We": (spec.m, 1),
        "be": (spec.m,),
    }
    if spec.accumulative:
        shapes["Wh"] = (spec.m, spec.m)
    return shapes


def init_params(spec: VarnnSpec, rng: Rng) -> VarnnParams:
    """Glorot-uniform weights, zero biases."""
    k, m = spec.k, spec.m
    params = VarnnParams(
        Wz=glorot_init(rng, k, spec.fusion_width),
        bz=np.zeros(k),
        Wo=glorot_init(rng, 1, k),
        bo=np.zeros(1),
        We=glorot_init(rng, m, 1),
        be=np.zeros(m),
        Wh=glorot_init(rng, m, m) if spec.accumulative else None,
    )
    if spec.scalar_residual:
        params.We[...] = 1.0
        params.be[...] = 0.0
    return params


def zero_params(spec: VarnnSpec) -> VarnnParams:
    return VarnnParams(**{name: np.zeros(shape) for name, shape in expected_shapes(spec).items()})


@dataclass
class WindowInstance:
    """One sliding window: ``w`` covariate rows, ``w - 1`` context targets."""

    xs: np.ndarray
    ys_context: np.ndarray
    y_target: float = float("nan")

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        if self.xs.ndim == 1:
            self.xs = self.xs[:, None]
        self.ys_context = np.asarray(self.ys_context, dtype=np.float64).reshape(-1)
        w = self.xs.shape[0]
        if w < 2:
            raise ValueError(f"window length must be >= 2, got {w}")
        if self.ys_context.shape[0] != w - 1:
            raise ValueError(f"need {w - 1} context targets for w={w}, got {self.ys_context.shape[0]}")

    @property
    def w(self) -> int:
        return self.xs.shape[0]


@dataclass
class RolloutTrace:
    """Cached intermediates of a batched rollout, indexed ``[step, batch, ...]``.

    ``h[0]`` is the zero initial state and ``h[s]`` the memory after context
    step ``s``; ``e`` and ``p`` (memory pre-activations) hold ``w - 1``
    entries because the final step performs no memory update.
    """

    z: np.ndarray
    a: np.ndarray
    u: np.ndarray
    y_hat: np.ndarray
    e: np.ndarray
    p: np.ndarray
    h: np.ndarray
    u_initial: Optional[np.ndarray]

    @property
    def h_initial(self) -> np.ndarray:
        return self.h[0]

    @property
    def prediction(self) -> np.ndarray:
        return self.y_hat[-1]

    @property
    def w(self) -> int:
        return self.z.shape[0]


def fuse(spec: VarnnSpec, x: np.ndarray, h_prev: np.ndarray, u_prev: Optional[np.ndarray] = None) -> np.ndarray:
    """Concatenate the fusion input along the last axis."""
    if spec.activation_memory != (u_prev is not None):
        need = "requires" if spec.activation_memory else "does not take"
        raise VariantMismatchError(f"variant {spec.variant} {need} the previous activation")
    parts = [x, h_prev] if u_prev is None else [x, h_prev, u_prev]
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=-1)


def predictor_step(spec: VarnnSpec, params: VarnnParams, z: np.ndarray):
    """Return ``(a, u, y_hat)``; works on a single vector or a batch."""
    a = affine(params.Wz, params.bz, z)
    u = activation(spec.sigma, a)
    y_hat = affine(params.Wo, params.bo, u)[..., 0]
    return a, u, y_hat


def memory_update(spec: VarnnSpec, params: VarnnParams, e, h_prev: np.ndarray):
    """Return ``(p, h)`` where ``p`` is the memory pre-activation."""
    e = np.asarray(e, dtype=np.float64)
    p = e[..., None] * params.We[:, 0] + params.be
    if spec.accumulative:
        p = p + affine(params.Wh, None, h_prev)
    return p, activation(spec.memory_activation, p)


def rollout_batch(spec: VarnnSpec, params: VarnnParams, xs: np.ndarray, ys_context: np.ndarray) -> RolloutTrace:
    """Teacher-forced rollout of ``B`` windows, ``xs`` (B, w, d), ``ys_context`` (B, w-1)."""
    B, w, d = xs.shape
    if d != spec.d:
        raise ShapeError(f"covariate width {d} != spec.d {spec.d}")
    if w < 2 or ys_context.shape != (B, w - 1):
        raise ShapeError(f"ys_context shape {ys_context.shape} incompatible with xs {xs.shape}")
    k, m = spec.k, spec.m
    z_all = np.empty((w, B, spec.fusion_width))
    a_all = np.empty((w, B, k))
    u_all = np.empty((w, B, k))
    y_all = np.empty((w, B))
    e_all = np.empty((w - 1, B))
    p_all = np.zeros((w - 1, B, m))
    h_all = np.zeros((w, B, m))

    h = np.zeros((B, m))
    u_initial = np.zeros((B, k)) if spec.activation_memory else None
    u_prev = u_initial
    for s in range(w):
        z = fuse(spec, xs[:, s, :], h, u_prev)
        a, u, y_hat = predictor_step(spec, params, z)
        z_all[s], a_all[s], u_all[s], y_all[s] = z, a, u, y_hat
        if s < w - 1:
            e = ys_context[:, s] - y_hat
            e_all[s] = e
            if not spec.no_residual:
                p, h = memory_update(spec, params, e, h)
                p_all[s] = p
                h_all[s + 1] = h
        if spec.activation_memory:
            u_prev = u
    if not np.all(np.isfinite(y_all)):
        raise numkit.NonFiniteError("rollout produced non-finite predictions")
    return RolloutTrace(z_all, a_all, u_all, y_all, e_all, p_all, h_all, u_initial)


def rollout(spec: VarnnSpec, params: VarnnParams, window: WindowInstance) -> RolloutTrace:
    """Single-window rollout; the trace has batch size 1. ``y_target`` is never read."""
    return rollout_batch(spec, params, window.xs[None], window.ys_context[None])


def predict(spec: VarnnSpec, params: VarnnParams, xs: np.ndarray, ys_context: np.ndarray) -> np.ndarray:
    return rollout_batch(spec, params, xs, ys_context).prediction


def backward_batch(
    spec: VarnnSpec,
    params: VarnnParams,
    xs: np.ndarray,
    y_target: np.ndarray,
    trace: RolloutTrace,
    reduce: str = "mean",
) -> VarnnParams:
    """Reverse sweep through the rollout for ``sum_b (y_hat_b - y_b)^2``.

    With ``reduce="mean"`` the result is divided by the batch size. Gradients
    reach earlier context steps through ``e_s = y_s - y_hat_s`` (the
    innovation has slope -1 in the prediction) and, for AM variants,
    through the carried activation.
    """
    w, B = trace.y_hat.shape
    if xs.shape[:2] != (B, w) or not np.array_equal(trace.z[:, :, : spec.d], xs.transpose(1, 0, 2)):
        raise TraceMismatchError("trace does not belong to this window batch")
    d, m = spec.d, spec.m
    scale = 1.0 / B if reduce == "mean" else 1.0
    grads = params.zeros_like()
    dWz, dbz, dWo, dbo, dWe, dbe = grads.Wz, grads.bz, grads.Wo, grads.bo, grads.We, grads.be
    dWh = grads.Wh

    g_yhat = 2.0 * (trace.y_hat[-1] - np.asarray(y_target, dtype=np.float64)) * scale
    g_h = np.zeros((B, m))  # gradient w.r.t. h_{s} flowing from later steps
    g_u = np.zeros((B, spec.k))  # gradient w.r.t. u_{s} via activation memory
    for s in range(w - 1, -1, -1):
        if s < w - 1:
            # memory update h_{s+1} = rho(p_s): trace index s
            if not spec.no_residual:
                p = trace.p[s]
                h_new = trace.h[s + 1]
                g_p = g_h * activation_grad(spec.memory_activation, p, h_new)
                dWe[:, 0] += g_p.T @ trace.e[s]
                dbe += g_p.sum(axis=0)
                g_e = g_p @ params.We[:, 0]
                g_h = np.zeros((B, m))
                if spec.accumulative:
                    dWh += g_p.T @ trace.h[s]
                    g_h = g_p @ params.Wh
            else:
                g_e = np.zeros(B)
                g_h = np.zeros((B, m))
            g_yhat = -g_e
        dWo[0] += g_yhat @ trace.u[s]
        dbo[0] += g_yhat.sum()
        g_uu = np.outer(g_yhat, params.Wo[0]) + g_u
        g_a = g_uu * activation_grad(spec.sigma, trace.a[s], trace.u[s])
        dWz += g_a.T @ trace.z[s]
        dbz += g_a.sum(axis=0)
        g_z = g_a @ params.Wz
        g_h = g_h + g_z[:, d : d + m]
        if spec.activation_memory:
            g_u = g_z[:, d + m :]
    for name in spec.frozen:
        getattr(grads, name)[...] = 0.0
    return grads


def backward(spec: VarnnSpec, params: VarnnParams, window: WindowInstance, trace: RolloutTrace) -> VarnnParams:
    """Gradient of ``(y_hat_t - y_t)^2`` for one window."""
    if trace.y_hat.shape[1] != 1 or trace.w != window.w:
        raise TraceMismatchError("trace does not belong to this window")
    return backward_batch(spec, params, window.xs[None], np.array([window.y_target]), trace, reduce="sum")


def squared_error(y_hat, y) -> np.ndarray:
    return (np.asarray(y) - np.asarray(y_hat)) ** 2


def count_parameters(spec: VarnnSpec) -> int:
    """Closed-form number of stored scalars in ``VarnnParams``."""
    k, m = spec.k, spec.m
    n = k * spec.fusion_width + k + k + 1 + m + m
    if spec.accumulative:
        n += m * m
    return n


def count_macs_per_window(spec: VarnnSpec, w: int) -> int:
    """Multiplies performed by one rollout of a length-``w`` window."""
    if w < 2:
        raise ValueError("w must be >= 2")
    k, fw, m = spec.k, spec.fusion_width, spec.m
    predictor = k * fw + k
    if spec.no_residual:
        mac_mem = 0
    else:
        mac_mem = m + (m * m if spec.accumulative else 0)
    return (w - 1) * (predictor + mac_mem) + predictor


class VarnnModel:
    """Adapter exposing a VARNN spec to the trainer."""

    kind = "varnn"

    def __init__(self, spec: VarnnSpec):
        self.spec = spec

    @property
    def name(self) -> str:
        if self.spec.no_residual:
            return "VARNN-noresidual"
        return "VARNN-" + self.spec.variant.replace("_", "+")

    @property
    def frozen(self) -> tuple:
        return self.spec.frozen

    def init_params(self, rng: Rng) -> VarnnParams:
        return init_params(self.spec, rng)

    def predict(self, params: VarnnParams, windows) -> np.ndarray:
        return predict(self.spec, params, windows.xs, windows.ys_context)

    def loss_and_grads(self, params: VarnnParams, windows):
        trace = rollout_batch(self.spec, params, windows.xs, windows.ys_context)
        loss = float(np.mean(squared_error(trace.prediction, windows.y_target)))
        return loss, backward_batch(self.spec, params, windows.xs, windows.y_target, trace)

    def count_parameters(self) -> int:
        return count_parameters(self.spec)

    def count_macs(self, w: int) -> int:
        return count_macs_per_window(self.spec, w)

    def describe(self) -> dict:
        return {"kind": self.kind, **dataclasses.asdict(self.spec)}

