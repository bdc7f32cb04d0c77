"""Series ingestion, scaling, splitting, windowing and synthetic generators."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .model import WindowInstance
from .numkit import Rng

MISSING_MARKERS = frozenset({"", "NA", "NaN"})


class DataError(ValueError):
    pass


@dataclass
class TimeSeriesDataset:
    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    feature_names: Tuple[str, ...] = ()
    target_name: str = "y"
    missing: Optional[np.ndarray] = None  # (T, d + 1) mask, last column is y
    groups: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if not self.feature_names:
            self.feature_names = tuple(f"x{i}" for i in range(self.X.shape[1]))
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("feature_names length does not match X columns")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any() or np.isnan(self.y).any())

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()

    def replace(self, **changes) -> "TimeSeriesDataset":
        return dataclasses.replace(self, **changes)


def _parse_cell(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text in MISSING_MARKERS:
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} has unparseable value {text!r}") from None


def load_csv(
    path,
    target_column: str,
    feature_columns: Optional[Sequence[str]] = None,
    timestamp_column: Optional[str] = None,
    exclude_columns: Sequence[str] = (),
    group_column: Optional[str] = None,
    name: Optional[str] = None,
) -> TimeSeriesDataset:
    """Read a headed CSV; rows are taken to be in chronological order.

    Cells equal to ``""``, ``"NA"`` or ``"NaN"`` become NaN and are flagged
    in ``dataset.missing``. When ``feature_columns`` is omitted every column
    except the target, timestamp, group and excluded ones is a feature.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        skip = {target_column, timestamp_column, group_column, *exclude_columns}
        if feature_columns is None:
            feature_columns = [h for h in header if h not in skip]
        missing_cols = [c for c in [target_column, *feature_columns] if c not in header]
        if timestamp_column and timestamp_column not in header:
            missing_cols.append(timestamp_column)
        if group_column and group_column not in header:
            missing_cols.append(group_column)
        if missing_cols:
            raise DataError(f"{path}: missing columns {missing_cols}")
        f_idx = [header.index(c) for c in feature_columns]
        t_idx = header.index(target_column)
        ts_idx = header.index(timestamp_column) if timestamp_column else None
        g_idx = header.index(group_column) if group_column else None
        rows_x, rows_y, stamps, groups = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            rows_x.append([_parse_cell(row[i], lineno, header[i]) for i in f_idx])
            rows_y.append(_parse_cell(row[t_idx], lineno, target_column))
            if ts_idx is not None:
                stamps.append(row[ts_idx])
            if g_idx is not None:
                groups.append(row[g_idx])
    if not rows_y:
        raise DataError(f"{path} has a header but no data rows")
    X = np.array(rows_x, dtype=np.float64).reshape(len(rows_y), len(f_idx))
    y = np.array(rows_y, dtype=np.float64)
    if stamps and any(b < a for a, b in zip(stamps, stamps[1:])):
        warnings.warn(f"{path}: timestamp column {timestamp_column!r} is not monotone", stacklevel=2)
    mask = np.concatenate([np.isnan(X), np.isnan(y)[:, None]], axis=1)
    return TimeSeriesDataset(
        X=X,
        y=y,
        name=name or path.stem,
        feature_names=tuple(feature_columns),
        target_name=target_column,
        missing=mask if mask.any() else None,
        groups=np.array(groups) if groups else None,
    )


def save_csv(dataset: TimeSeriesDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*dataset.feature_names, dataset.target_name])
        for xrow, yv in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in xrow] + [repr(float(yv))])


@dataclass
class ScalerState:
    """Per-column min/max fitted on training rows only."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float
    y_max: float

    @staticmethod
    def _apply(values, lo, hi):
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = (values - lo) / safe
        # constant training columns carry no information: map them to 0
        return np.where(span > 0, out, 0.0 * values)

    @staticmethod
    def _invert(values, lo, hi):
        return values * (hi - lo) + lo

    def transform_X(self, X):
        return self._apply(np.asarray(X, dtype=np.float64), self.x_min, self.x_max)

    def transform_y(self, y):
        return self._apply(np.asarray(y, dtype=np.float64), self.y_min, self.y_max)

    def inverse_X(self, X):
        return self._invert(np.asarray(X, dtype=np.float64), self.x_min, self.x_max)

    def inverse_y(self, y):
        return self._invert(np.asarray(y, dtype=np.float64), self.y_min, self.y_max)

    def transform(self, dataset: TimeSeriesDataset) -> TimeSeriesDataset:
        return dataset.replace(X=self.transform_X(dataset.X), y=self.transform_y(dataset.y))

    def inverse_transform(self, dataset: TimeSeriesDataset) -> TimeSeriesDataset:
        return dataset.replace(X=self.inverse_X(dataset.X), y=self.inverse_y(dataset.y))

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min.tolist(),
            "x_max": self.x_max.tolist(),
            "y_min": self.y_min,
            "y_max": self.y_max,
        }


def fit_scaler(X_train, y_train) -> ScalerState:
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    if X_train.ndim == 1:
        X_train = X_train[:, None]
    with warnings.catch_warnings():
        # all-NaN columns are handled below
        warnings.simplefilter("ignore", RuntimeWarning)
        x_min = np.nanmin(X_train, axis=0)
        x_max = np.nanmax(X_train, axis=0)
        y_min = float(np.nanmin(y_train))
        y_max = float(np.nanmax(y_train))
    x_min = np.where(np.isnan(x_min), 0.0, x_min)
    x_max = np.where(np.isnan(x_max), 0.0, x_max)
    if math.isnan(y_min):
        y_min = y_max = 0.0
    return ScalerState(x_min, x_max, y_min, y_max)


def _ffill_column(col: np.ndarray) -> Tuple[np.ndarray, bool]:
    out = col.copy()
    nan = np.isnan(out)
    if not nan.any():
        return out, False
    if nan.all():
        out[:] = 0.0
        return out, True
    idx = np.where(~nan, np.arange(out.size), 0)
    np.maximum.accumulate(idx, out=idx)
    out = out[idx]
    # leading gaps have no previous observation: scaled-space floor
    first = int(np.argmax(~nan))
    out[:first] = 0.0
    return out, False


def fill_missing(dataset: TimeSeriesDataset, strategy: str = "forward_fill_then_zero", by_group: bool = True) -> TimeSeriesDataset:
    """Forward-fill each column; leading gaps become 0.

    When the dataset carries ``groups`` (e.g. station ids) and ``by_group``
    is set, each group is filled independently.
    """
    if strategy != "forward_fill_then_zero":
        raise ValueError(f"unknown fill strategy {strategy!r}")
    data = np.concatenate([dataset.X, dataset.y[:, None]], axis=1)
    if dataset.groups is not None and by_group:
        blocks = [np.flatnonzero(dataset.groups == g) for g in dict.fromkeys(dataset.groups.tolist())]
    else:
        blocks = [np.arange(dataset.T)]
    names = [*dataset.feature_names, dataset.target_name]
    for rows in blocks:
        for j in range(data.shape[1]):
            filled, all_missing = _ffill_column(data[rows, j])
            if all_missing:
                warnings.warn(f"column {names[j]!r} is entirely missing; filled with zeros", stacklevel=2)
            data[rows, j] = filled
    return dataset.replace(X=data[:, :-1], y=data[:, -1])


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split: the first ``train_fraction`` of rows is the
    training side, whose last ``val_fraction`` becomes validation."""

    train_fraction: float = 0.8
    val_fraction: float = 0.2

    def boundaries(self, T: int) -> Dict[str, Tuple[int, int]]:
        if not 0.0 < self.train_fraction <= 1.0 or not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"invalid split fractions {self}")
        train_end = int(T * self.train_fraction)
        val_len = int(train_end * self.val_fraction)
        out = {"train": (0, train_end - val_len)}
        if val_len:
            out["val"] = (train_end - val_len, train_end)
        if train_end < T:
            out["test"] = (train_end, T)
        return out


@dataclass
class WindowSet:
    """A batch of windows: ``xs`` (N, w, d), ``ys`` (N, w), ``t_index`` (N,).

    ``ys[:, -1]`` is the supervised target ``y_t``; the rest is context.
    """

    xs: np.ndarray
    ys: np.ndarray
    t_index: np.ndarray
    segment: str = ""

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def w(self) -> int:
        return self.xs.shape[1]

    @property
    def d(self) -> int:
        return self.xs.shape[2]

    @property
    def ys_context(self) -> np.ndarray:
        return self.ys[:, :-1]

    @property
    def y_target(self) -> np.ndarray:
        return self.ys[:, -1]

    @property
    def x_current(self) -> np.ndarray:
        return self.xs[:, -1, :]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.xs[idx], self.ys[idx], self.t_index[idx], self.segment)

    def window(self, i: int) -> WindowInstance:
        return WindowInstance(self.xs[i], self.ys[i, :-1], float(self.ys[i, -1]))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.xs, self.ys, self.t_index):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def windows_for_segment(X, y, start: int, end: int, w: int, stride: int = 1, segment: str = "") -> WindowSet:
    if w < 2:
        raise ValueError(f"window length must be >= 2, got {w}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if end - start < w:
        raise DataError(f"segment {segment or (start, end)} has {end - start} rows, shorter than w={w}")
    t_index = np.arange(start + w - 1, end, stride)
    offsets = np.arange(-w + 1, 1)
    rows = t_index[:, None] + offsets[None, :]
    return WindowSet(np.asarray(X)[rows], np.asarray(y)[rows], t_index, segment)


def make_windows(dataset: TimeSeriesDataset, w: int, stride: int = 1, split: Optional[SplitSpec] = None) -> Dict[str, WindowSet]:
    """One window per in-segment end index; windows never span a boundary."""
    bounds = split.boundaries(dataset.T) if split is not None else {"all": (0, dataset.T)}
    return {
        name: windows_for_segment(dataset.X, dataset.y, lo, hi, w, stride, name)
        for name, (lo, hi) in bounds.items()
    }


@dataclass
class PreparedData:
    dataset: TimeSeriesDataset  # scaled and filled
    scaler: ScalerState
    windows: Dict[str, WindowSet]
    boundaries: Dict[str, Tuple[int, int]]
    w: int
    stride: int

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.windows):
            h.update(name.encode())
            h.update(self.windows[name].fingerprint().encode())
        return h.hexdigest()


def prepare(dataset: TimeSeriesDataset, w: int = 5, stride: int = 1, split: SplitSpec = SplitSpec()) -> PreparedData:
    """Split, fit the scaler on the training rows, scale, fill, window."""
    bounds = split.boundaries(dataset.T)
    lo, hi = bounds["train"]
    scaler = fit_scaler(dataset.X[lo:hi], dataset.y[lo:hi])
    scaled = scaler.transform(dataset)
    if scaled.has_missing():
        scaled = fill_missing(scaled)
    windows = make_windows(scaled, w, stride, split)
    return PreparedData(scaled, scaler, windows, bounds, w, stride)


def cache_key(dataset: TimeSeriesDataset, w: int, stride: int, split: SplitSpec) -> str:
    text = f"{dataset.fingerprint()}|w={w}|stride={stride}|{split.train_fraction}|{split.val_fraction}"
    return hashlib.sha256(text.encode()).hexdigest()[:24]


def save_window_cache(directory, key: str, windows: Dict[str, WindowSet]) -> Path:
    """Store windows as ``<key>.npz`` with arrays ``<segment>__xs|ys|t``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, ws in windows.items():
        arrays[f"{name}__xs"] = ws.xs
        arrays[f"{name}__ys"] = ws.ys
        arrays[f"{name}__t"] = ws.t_index
    path = directory / f"{key}.npz"
    np.savez(path, **arrays)
    return path


def load_window_cache(directory, key: str) -> Optional[Dict[str, WindowSet]]:
    path = Path(directory) / f"{key}.npz"
    if not path.exists():
        return None
    with np.load(path) as data:
        names = sorted({k.split("__")[0] for k in data.files})
        return {n: WindowSet(data[f"{n}__xs"], data[f"{n}__ys"], data[f"{n}__t"], n) for n in names}


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class Regime:
    start: int
    end: int
    beta: Tuple[float, ...]


@dataclass(frozen=True)
class NoiseSegment:
    start: int
    end: int
    sigma: float


@dataclass(frozen=True)
class SyntheticSpec:
    """``y_t = beta(t) . x_t + gamma * y_{t-1} + eps_t``, ``x_t ~ U[0,1]^d``.

    ``beta(t)`` is the coefficient of the active regime plus
    ``drift_rate * t`` on every component; ``eps_t ~ N(0, sigma(t))``.
    """

    T: int
    d: int
    regimes: Tuple[Regime, ...]
    noise: Tuple[NoiseSegment, ...]
    gamma: float = 0.0
    drift_rate: float = 0.0
    seed: int = 2025

    def __post_init__(self):
        for parts, label in ((self.regimes, "regimes"), (self.noise, "noise")):
            cursor = 0
            for seg in parts:
                if seg.start != cursor or seg.end <= seg.start:
                    raise ValueError(f"{label} must tile [0, {self.T}) contiguously")
                cursor = seg.end
            if cursor != self.T:
                raise ValueError(f"{label} must tile [0, {self.T}) contiguously")
        for r in self.regimes:
            if len(r.beta) != self.d:
                raise ValueError(f"regime beta has {len(r.beta)} entries, expected d={self.d}")
        if any(n.sigma < 0 for n in self.noise):
            raise ValueError("noise sigma must be non-negative")

    @property
    def heteroscedastic(self) -> bool:
        return len({n.sigma for n in self.noise}) > 1


def generate_synthetic(spec: SyntheticSpec) -> TimeSeriesDataset:
    rng = Rng(spec.seed)
    X = rng.spawn("covariates").uniform((spec.T, spec.d))
    eps = rng.spawn("noise").normal(spec.T)
    beta = np.empty((spec.T, spec.d))
    for r in spec.regimes:
        beta[r.start : r.end] = r.beta
    beta += spec.drift_rate * np.arange(spec.T)[:, None]
    sigma = np.empty(spec.T)
    for n in spec.noise:
        sigma[n.start : n.end] = n.sigma
    signal = np.einsum("td,td->t", beta, X) + sigma * eps
    y = np.empty(spec.T)
    prev = 0.0
    for t in range(spec.T):
        prev = signal[t] + spec.gamma * prev
        y[t] = prev
    meta = {
        "generator": "synthetic",
        "regime_boundaries": [[r.start, r.end] for r in spec.regimes],
        "noise_boundaries": [[n.start, n.end, n.sigma] for n in spec.noise],
        "gamma": spec.gamma,
        "drift_rate": spec.drift_rate,
        "seed": spec.seed,
    }
    return TimeSeriesDataset(X, y, name=f"synthetic-{spec.seed}", metadata=meta)


def regime_shift_spec(
    T: int = 5000,
    d: int = 4,
    seed: int = 2025,
    gamma: float = 0.9,
    heteroscedastic: bool = True,
    two_regimes: bool = True,
    sigma_low: float = 0.05,
    sigma_high: float = 0.25,
    noise_blocks: int = 8,
    drift_rate: float = 0.0,
) -> SyntheticSpec:
    """Desk-scale benchmark: a coefficient flip at ``T/2`` with noise whose
    level alternates between ``sigma_low`` and ``sigma_high`` in equal blocks."""
    base = tuple(float(v) for v in np.linspace(1.0, -0.5, d))
    half = T // 2
    if two_regimes:
        regimes = (Regime(0, half, base), Regime(half, T, tuple(-b for b in base)))
    else:
        regimes = (Regime(0, T, base),)
    if heteroscedastic:
        edges = np.linspace(0, T, noise_blocks + 1).astype(int)
        noise = tuple(
            NoiseSegment(int(a), int(b), sigma_low if i % 2 == 0 else sigma_high)
            for i, (a, b) in enumerate(zip(edges[:-1], edges[1:]))
        )
    else:
        noise = (NoiseSegment(0, T, sigma_low),)
    return SyntheticSpec(T=T, d=d, regimes=regimes, noise=noise, gamma=gamma, drift_rate=drift_rate, seed=seed)


def synthetic_spec_from_dict(cfg: dict) -> SyntheticSpec:
    """Build a spec from config: either explicit segments or ``preset: regime_shift``."""
    cfg = dict(cfg)
    preset = cfg.pop("preset", None)
    if preset == "regime_shift":
        return regime_shift_spec(**cfg)
    if preset is not None:
        raise ValueError(f"unknown synthetic preset {preset!r}")
    allowed = {"T", "d", "regimes", "noise", "gamma", "drift_rate", "seed"}
    unknown = set(cfg) - allowed
    if unknown:
        raise KeyError(f"unknown synthetic keys: {sorted(unknown)}")
    regimes = tuple(Regime(int(r["start"]), int(r["end"]), tuple(float(b) for b in r["beta"])) for r in cfg["regimes"])
    noise_cfg = cfg["noise"]
    if isinstance(noise_cfg, (int, float)):
        noise = (NoiseSegment(0, int(cfg["T"]), float(noise_cfg)),)
    else:
        noise = tuple(NoiseSegment(int(n["start"]), int(n["end"]), float(n["sigma"])) for n in noise_cfg)
    return SyntheticSpec(
        T=int(cfg["T"]),
        d=int(cfg["d"]),
        regimes=regimes,
        noise=noise,
        gamma=float(cfg.get("gamma", 0.0)),
        drift_rate=float(cfg.get("drift_rate", 0.0)),
        seed=int(cfg.get("seed", 2025)),
    )


def all_window_indices_within(windows: WindowSet, bounds: Tuple[int, int]) -> bool:
    lo, hi = bounds
    first = windows.t_index - windows.w + 1
    return bool(np.all(first >= lo) and np.all(windows.t_index < hi))

