"""Scenario sampling, dataset generation, splits, and normalization.

A dataset row pairs the network inputs (mean winds u, v plus the log of
the 18 detector counts) with the release parameters that produced them
(x_c, y_c, m_c). Rows are generated from independent seeded streams so
row i is reproducible from (seed, i) alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, PlumelocError, ShapeError
from .fileio import fmt, read_json, write_json
from .seeds import child_rng, child_sequence
from .sensing import DetectorSpec, MeasurementVector, PhysicsConstants, observe_array
from .transport import GridConfig, Scenario

# Uniform sampling bounds for generated release scenarios.
SCENARIO_BOUNDS = {
    "x_c": (-500.0, 0.0),
    "y_c": (-250.0, 250.0),
    "m_c": (1.0, 5.0),
    "u": (2.0, 4.0),
    "v": (-1.0, 1.0),
}

SENSOR_REGION_X = (0.0, 2000.0)
SENSOR_REGION_Y = (-750.0, 750.0)

N_DETECTORS = 18
N_FEATURES = 2 + N_DETECTORS
N_TARGETS = 3

DESK_DATASET_ROWS = 40_000
FULL_DATASET_ROWS = 400_000

LOG_COUNT_FLOOR = 1  # counts below 1 map to log(1) = 0


def default_layout() -> tuple[DetectorSpec, ...]:
    """Canonical 18-detector array: a 6 x 3 cell-centered grid covering the
    2000 m x 1500 m sensor region downwind of the release box."""
    xs = [(j + 0.5) * (SENSOR_REGION_X[1] - SENSOR_REGION_X[0]) / 6.0 for j in range(6)]
    ys = [-500.0, 0.0, 500.0]
    return tuple(DetectorSpec(x=x, y=y) for y in ys for x in xs)


def sample_scenario(rng: np.random.Generator) -> Scenario:
    """One release scenario with uniform parameters inside SCENARIO_BOUNDS.

    Diffusivities are fixed at (5, 5) m^2/s and the observation time at
    500 s. Draw order is x_c, y_c, m_c, u, v.
    """
    draws = {name: rng.uniform(lo, hi) for name, (lo, hi) in SCENARIO_BOUNDS.items()}
    return Scenario(**draws)


def make_features(m: MeasurementVector, u: float, v: float) -> np.ndarray:
    """Feature vector [u, v, ln(counts)] with counts floored at 1."""
    return features_from_counts(m.counts, u, v)


def features_from_counts(counts, u, v) -> np.ndarray:
    """Vectorized feature construction; counts may be (18,) or (N, 18)."""
    counts = np.asarray(counts, dtype=float)
    logs = np.log(np.maximum(counts, LOG_COUNT_FLOOR))
    if counts.ndim == 1:
        return np.concatenate(([u, v], logs))
    winds = np.column_stack([np.broadcast_to(u, len(counts)),
                             np.broadcast_to(v, len(counts))])
    return np.hstack([winds, logs])


@dataclass
class Dataset:
    """Feature/target table plus the raw counts needed for file round-trips."""

    features: np.ndarray          # (N, 20)
    targets: np.ndarray           # (N, 3): x_c m, y_c m, m_c g
    seed: int
    split: str = "full"
    counts: np.ndarray | None = None  # (N, 18) raw integer counts

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ShapeError(f"features must be (N, {N_FEATURES})")
        if self.targets.shape != (len(self.features), N_TARGETS):
            raise ShapeError(f"targets must be (N, {N_TARGETS})")
        if not (np.isfinite(self.features).all() and np.isfinite(self.targets).all()):
            raise PlumelocError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.features)


def generate_dataset(n: int, seed: int, layout=None, pc: PhysicsConstants | None = None,
                     grid_cfg: GridConfig | None = None) -> Dataset:
    """Simulate `n` independent (scenario, measurement) rows.

    Row i draws its scenario from stream (seed, 0, i) and its detector
    counts from streams (seed, 1, i, detector); regenerating any row needs
    only the seed and the row index.
    """
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    layout = default_layout() if layout is None else tuple(layout)
    pc = pc or PhysicsConstants()
    grid_cfg = grid_cfg or GridConfig()

    features = np.empty((n, N_FEATURES))
    targets = np.empty((n, N_TARGETS))
    counts = np.empty((n, len(layout)), dtype=np.int64)
    for i in range(n):
        try:
            s = sample_scenario(child_rng(seed, 0, i))
            m = observe_array(s, layout, pc, grid_cfg, seed=child_sequence(seed, 1, i))
        except PlumelocError as exc:
            raise type(exc)(f"row {i}: {exc}") from exc
        counts[i] = m.counts
        features[i] = features_from_counts(m.counts, s.u, s.v)
        targets[i] = (s.x_c, s.y_c, s.m_c)
    return Dataset(features=features, targets=targets, seed=seed, counts=counts)


def split_dataset(d: Dataset, ratios=(0.5, 0.25, 0.25)):
    """Disjoint, order-stable (train, val, test) partition.

    Sizes are floor(N * r) with the remainder assigned to train.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n = len(d)
    sizes = [int(np.floor(n * r)) for r in ratios]
    sizes[0] += n - sum(sizes)
    if min(sizes) < 1:
        raise ConfigError(f"split of {n} rows by {ratios} leaves an empty part")

    parts = []
    start = 0
    for tag, size in zip(("train", "val", "test"), sizes):
        sl = slice(start, start + size)
        parts.append(replace(
            d,
            features=d.features[sl],
            targets=d.targets[sl],
            split=tag,
            counts=None if d.counts is None else d.counts[sl],
        ))
        start += size
    return tuple(parts)


@dataclass(frozen=True)
class Normalizer:
    """Per-column z-scoring fitted on the training split."""

    feat_mean: np.ndarray
    feat_std: np.ndarray
    tgt_mean: np.ndarray
    tgt_std: np.ndarray

    def apply_features(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feat_mean) / self.feat_std

    def invert_features(self, x: np.ndarray) -> np.ndarray:
        return x * self.feat_std + self.feat_mean

    def apply_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.tgt_mean) / self.tgt_std

    def invert_targets(self, y: np.ndarray) -> np.ndarray:
        return y * self.tgt_std + self.tgt_mean

    def to_dict(self) -> dict:
        return {
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "tgt_mean": self.tgt_mean.tolist(),
            "tgt_std": self.tgt_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("feat_mean", "feat_std", "tgt_mean", "tgt_std")))


def fit_normalizer(train: Dataset) -> Normalizer:
    """Column means and standard deviations of the training split."""
    if len(train) == 0:
        raise ConfigError("cannot fit a normalizer on an empty split")
    fm, fs = train.features.mean(axis=0), train.features.std(axis=0)
    tm, ts = train.targets.mean(axis=0), train.targets.std(axis=0)
    if (fs == 0.0).any() or (ts == 0.0).any():
        raise ConfigError("zero-variance column; cannot z-score")
    return Normalizer(fm, fs, tm, ts)


def save_dataset(path, d: Dataset, meta: dict) -> None:
    """CSV with columns u,v,d1..d18,x_c,y_c,m_c (raw counts, not logs),
    plus a JSON metadata sidecar."""
    if d.counts is None:
        raise ConfigError("dataset has no raw counts; cannot write file")
    header = ["u", "v"] + [f"d{j + 1}" for j in range(N_DETECTORS)] + ["x_c", "y_c", "m_c"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(d)):
            row = [fmt(d.features[i, 0]), fmt(d.features[i, 1])]
            row += [str(int(c)) for c in d.counts[i]]
            row += [fmt(t) for t in d.targets[i]]
            writer.writerow(row)
    sidecar = dict(meta)
    sidecar.setdefault("format_version", 1)
    sidecar.setdefault("kind", "dataset")
    sidecar.setdefault("seed", d.seed)
    sidecar.setdefault("rows", len(d))
    write_json(_sidecar_path(path), sidecar)


def load_dataset(path):
    """Read a dataset CSV (and sidecar if present); features are rebuilt
    from the stored raw counts. Returns (Dataset, meta)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != N_FEATURES + N_TARGETS:
            raise ConfigError(f"unexpected dataset header in {path}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise ConfigError(f"dataset file {path} has no rows")
    arr = np.asarray(rows, dtype=float)
    winds = arr[:, :2]
    counts = arr[:, 2:2 + N_DETECTORS].astype(np.int64)
    targets = arr[:, 2 + N_DETECTORS:]
    logs = np.log(np.maximum(counts, LOG_COUNT_FLOOR))
    features = np.hstack([winds, logs])
    try:
        meta = read_json(_sidecar_path(path))
    except FileNotFoundError:
        meta = {}
    return Dataset(features=features, targets=targets, seed=int(meta.get("seed", -1)),
                   counts=counts), meta


def _sidecar_path(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".meta.json"
