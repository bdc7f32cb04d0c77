"""Dense numerical kernel shared by every model in the package.

Matrices and vectors are plain ``numpy.ndarray`` objects in float64,
stored row-major (C order). ``Mat`` is any 2-D array, ``Vec`` any 1-D
array; batched helpers accept a leading batch axis.

The random source is SplitMix64 (Steele, Lea & Flood 2014), documented
bit-exactly here so streams are portable:

    state_i = seed + (i + 1) * 0x9E3779B97F4A7C15            (mod 2**64)
    z = state_i
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9                 (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB                 (mod 2**64)
    draw_i = z ^ (z >> 31)

Draw ``i`` is a pure function of ``(seed, i)``, so blocks of draws are
computed vectorised. Uniform doubles use the top 53 bits:
``(draw >> 11) * 2**-53`` in ``[0, 1)``.
"""

from __future__ import annotations

import zlib
from typing import Literal, Union

import numpy as np

Mat = np.ndarray
Vec = np.ndarray
ActivationKind = Literal["relu", "tanh", "identity"]
ACTIVATIONS = ("relu", "tanh", "identity")

DTYPE = np.float64

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class NonFiniteError(ArithmeticError):
    """A public operation produced NaN or Inf."""


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} produced non-finite values")
    return arr


def as_mat(data, rows: int | None = None, cols: int | None = None) -> Mat:
    """Build a float64 row-major matrix, optionally reshaping flat data."""
    arr = np.array(data, dtype=DTYPE, order="C")
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise ShapeError(f"data length {arr.size} != rows*cols = {rows}*{cols}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return _check_finite(arr, "as_mat")


def as_vec(data) -> Vec:
    arr = np.array(data, dtype=DTYPE).reshape(-1)
    return _check_finite(arr, "as_vec")


def matvec(m: Mat, v: Vec) -> Vec:
    """Return ``m @ v`` after checking ``m.cols == v.len``."""
    if m.ndim != 2 or v.ndim != 1:
        raise ShapeError(f"matvec needs (rows, cols) x (len,), got {m.shape} x {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec dimension mismatch: m.cols={m.shape[1]} but v.len={v.shape[0]}")
    return _check_finite(m @ v, "matvec")


def affine(w: Mat, b: Vec | None, x: np.ndarray) -> np.ndarray:
    """Batched affine map ``x @ w.T + b`` where ``x`` is (batch, cols)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"affine dimension mismatch: w.cols={w.shape[1]} but input width={x.shape[-1]}")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out


def activation(kind: str, v: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "identity":
        return np.array(v, dtype=DTYPE, copy=True)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(kind: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Elementwise derivative of ``activation`` given its input and output.

    The ReLU subgradient at 0 is taken as 0.
    """
    if kind == "relu":
        return (pre > 0.0).astype(DTYPE)
    if kind == "tanh":
        return 1.0 - post * post
    if kind == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _splitmix(states: np.ndarray) -> np.ndarray:
    z = states
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, label: str) -> int:
    """Stable 64-bit child seed for a named sub-stream."""
    salt = zlib.crc32(label.encode("utf-8"))
    states = np.array([(seed ^ (salt << 32) ^ salt) & _MASK64], dtype=np.uint64) + _GAMMA
    return int(_splitmix(states)[0])


class Rng:
    """Counter-based SplitMix64 stream (see module docstring)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def spawn(self, label: str) -> "Rng":
        return Rng(derive_seed(self.seed, label))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        states = np.uint64(self.seed) + idx * _GAMMA
        return _splitmix(states)

    def uniform(self, size: Union[int, tuple] = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(DTYPE) * (2.0 ** -53)
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size: Union[int, tuple] = 1, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        # Box-Muller, cosine branch only: two uniforms per normal.
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = self.uniform(2 * n)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[step] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def glorot_init(rng: Rng, rows: int, cols: int) -> Mat:
    """Glorot-uniform matrix with limit ``sqrt(6 / (rows + cols))``."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs rows, cols >= 1, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform((rows, cols), -limit, limit)
