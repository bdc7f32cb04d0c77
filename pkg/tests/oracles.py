"""Independent reference implementations used only by the tests."""

import math

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64_stream(seed, n):
    """Plain-integer SplitMix64, the textbook sequential form."""
    state = seed & MASK64
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def tanh_series(x, terms=60):
    """tanh through exp(2x) computed by its Taylor series."""
    s, term = 0.0, 1.0
    for n in range(terms):
        s += term
        term *= 2.0 * x / (n + 1)
    return (s - 1.0) / (s + 1.0)


def qr_least_squares(X, y):
    """Solve min ||[X 1] c - y|| by Householder QR; returns (weights, intercept)."""
    A = np.concatenate([np.asarray(X, dtype=float), np.ones((len(y), 1))], axis=1)
    q, r = np.linalg.qr(A)
    coef = np.linalg.solve(r, q.T @ np.asarray(y, dtype=float))
    return coef[:-1], float(coef[-1])


def hand_rollout_rm_1d(Wz, bz, Wo, bo, We, be, xs, ys, sigma, rho):
    """Scalar RM with d = m = k = 1 written out step by step."""
    h = 0.0
    for x, y in zip(xs[:-1], ys):
        y_hat = Wo * sigma(Wz[0] * x + Wz[1] * h + bz) + bo
        h = rho(We * (y - y_hat) + be)
    return Wo * sigma(Wz[0] * xs[-1] + Wz[1] * h + bz) + bo


def relu(v):
    return v if v > 0 else 0.0


def variance_oracle(values):
    mean = math.fsum(values) / len(values)
    return math.fsum((v - mean) ** 2 for v in values) / len(values)
