"""Scalar reference rollout with an instrumented multiply counter.

Written with plain Python floats and explicit loops, sharing nothing with
the batched numpy path in :mod:`varnn.model` beyond the parameter
containers. Used to cross-check forward values and MAC accounting.
"""

from __future__ import annotations

import math


class MacCounter:
    def __init__(self):
        self.count = 0

    def mul(self, a: float, b: float) -> float:
        self.count += 1
        return a * b


def _act(kind: str, x: float) -> float:
    if kind == "relu":
        return x if x > 0.0 else 0.0
    if kind == "tanh":
        return math.tanh(x)
    return x


def _dense(counter: MacCounter, W: list, b, v: list) -> list:
    out = []
    for i, row in enumerate(W):
        acc = 0.0
        for wij, vj in zip(row, v):
            acc += counter.mul(wij, vj)
        out.append(acc + (b[i] if b is not None else 0.0))
    return out


def scalar_rollout(spec, params, window):
    """Return ``(y_hat_t, steps, macs)`` for one window.

    ``steps`` lists a dict per context step with keys ``y_hat``, ``e`` and
    ``h``, followed by a final dict holding only ``y_hat``.
    """
    counter = MacCounter()
    Wz = params.Wz.tolist()
    bz = params.bz.tolist()
    Wo = params.Wo.tolist()
    bo = float(params.bo[0])
    We = [row[0] for row in params.We.tolist()]
    be = params.be.tolist()
    Wh = params.Wh.tolist() if params.Wh is not None else None
    rho = "identity" if spec.scalar_residual else spec.rho
    am = spec.variant in ("RM_AM", "ARM_AM")
    arm = spec.variant in ("ARM", "ARM_AM")

    xs = window.xs.tolist()
    ys = window.ys_context.tolist()
    w = len(xs)
    h = [0.0] * spec.m
    u_prev = [0.0] * spec.k
    steps = []
    y_hat = 0.0
    for s in range(w):
        z = list(xs[s]) + list(h) + (list(u_prev) if am else [])
        u = [_act(spec.sigma, a) for a in _dense(counter, Wz, bz, z)]
        y_hat = _dense(counter, Wo, [bo], u)[0]
        if s == w - 1:
            steps.append({"y_hat": y_hat})
            break
        e = ys[s] - y_hat
        if spec.no_residual:
            h = [0.0] * spec.m
        else:
            pre = [counter.mul(We[i], e) + be[i] for i in range(spec.m)]
            if arm:
                rec = _dense(counter, Wh, None, h)
                pre = [pre[i] + rec[i] for i in range(spec.m)]
            h = [_act(rho, v) for v in pre]
        steps.append({"y_hat": y_hat, "e": e, "h": list(h)})
        u_prev = u
    return y_hat, steps, counter.count
