"""Named tensor containers shared by VARNN and the neural baselines."""

from __future__ import annotations

import dataclasses
from typing import Dict

import numpy as np


@dataclasses.dataclass
class ParamSet:
    """Dataclass of float64 arrays; ``None`` fields are absent tensors.

    Gradients use the same class as the parameters they belong to.
    """

    def tensors(self) -> Dict[str, np.ndarray]:
        """Present tensors in declaration order. Arrays are shared, not copied."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = value
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(tensors) - names
        if unknown:
            raise KeyError(f"unknown tensors for {cls.__name__}: {sorted(unknown)}")
        return cls(**{k: np.array(v, dtype=np.float64) for k, v in tensors.items()})

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.tensors().items()})

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.tensors().items()})

    def n_scalars(self) -> int:
        return int(sum(v.size for v in self.tensors().values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors().values()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors().values())
