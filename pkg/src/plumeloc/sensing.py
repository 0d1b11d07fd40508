"""NaI detector response to a dispersed gamma emitter.

Expected counts for one detector over a dwell are the cell-discretized
shine integral

    sum_i (c_i * SA) * dt * eff * A / (4 pi d_i^2) * exp(-mu_a d_i) * dA_cell
      + B * dt

with c_i the cell-mean concentration (g/m^2), SA the specific activity
(Bq/g), d_i the detector-to-cell-center distance, mu_a the linear
attenuation of air, and B the background count rate. Measured counts are
Poisson draws around that mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, SingularityError
from .fileio import read_json, write_json
from .transport import (
    ConcentrationField,
    GridConfig,
    Scenario,
    cell_concentrations,
    grid_for_scenario,
)

CS137_SPECIFIC_ACTIVITY = 3.214e12  # Bq/g
# 662 keV gammas in dry sea-level air (mass attenuation 7.74e-3 m^2/kg
# times 1.285 kg/m^3); exposed as a configuration value.
AIR_ATTENUATION = 9.95e-3  # 1/m


@dataclass(frozen=True)
class DetectorSpec:
    """Position and physical constants of one NaI scintillator detector."""

    x: float
    y: float
    area: float = 0.0058          # m^2, 3 in x 3 in face
    efficiency: float = 0.62      # intrinsic, 662 keV
    dwell_time: float = 0.1       # s
    background_rate: float = 300.0  # counts/s

    def __post_init__(self):
        if self.area <= 0.0:
            raise DomainError(f"detector face area must be positive, got {self.area}")
        if not 0.0 < self.efficiency <= 1.0:
            raise DomainError(f"intrinsic efficiency must be in (0, 1], got {self.efficiency}")
        if self.dwell_time <= 0.0:
            raise DomainError(f"dwell time must be positive, got {self.dwell_time}")
        if self.background_rate < 0.0:
            raise DomainError(f"background rate must be >= 0, got {self.background_rate}")


@dataclass(frozen=True)
class PhysicsConstants:
    """Radionuclide and air-attenuation constants."""

    specific_activity: float = CS137_SPECIFIC_ACTIVITY  # Bq/g
    attenuation: float = AIR_ATTENUATION                # 1/m

    def __post_init__(self):
        if self.specific_activity <= 0.0:
            raise DomainError("specific activity must be positive")
        if self.attenuation < 0.0:
            raise DomainError("attenuation coefficient must be >= 0")


@dataclass(frozen=True)
class MeasurementVector:
    """One snapshot of integer counts for a detector array."""

    counts: np.ndarray        # (n_detectors,), int64, >= 0
    detector_ids: tuple
    t_obs: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.shape[0] != len(self.detector_ids):
            raise ShapeError("counts must be 1-D with one entry per detector")
        if (counts < 0).any():
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)


def expected_counts_array(field: ConcentrationField, detectors, pc: PhysicsConstants) -> np.ndarray:
    """Expected (real-valued) counts for each detector; vectorized over cells."""
    cx = field.grid.cell_centers_x
    cy = field.grid.cell_centers_y
    xm, ym = np.meshgrid(cx, cy, indexing="ij")
    cell_x = xm.ravel()
    cell_y = ym.ravel()
    conc = field.cell_values.ravel()

    det_x = np.array([d.x for d in detectors])
    det_y = np.array([d.y for d in detectors])
    if not (np.isfinite(det_x).all() and np.isfinite(det_y).all()):
        raise DomainError("detector positions must be finite")

    # One detector at a time keeps each temporary small enough for the
    # allocator to recycle, which dominates the cost of this kernel.
    signals = np.empty(len(detectors))
    for j in range(len(detectors)):
        ddx = det_x[j] - cell_x
        ddy = det_y[j] - cell_y
        ddx *= ddx
        ddy *= ddy
        ddx += ddy                  # squared distance
        if not ddx.all():
            raise SingularityError(
                "detector located exactly on a grid-cell center; "
                "move the detector or change the grid"
            )
        np.sqrt(ddx, out=ddy)
        ddy *= -pc.attenuation
        np.exp(ddy, out=ddy)        # air attenuation
        ddx *= 4.0 * np.pi
        ddy /= ddx                  # shine kernel: exp(-mu d) / (4 pi d^2)
        signals[j] = ddy @ conc

    scale = np.array([
        pc.specific_activity * d.dwell_time * d.efficiency * d.area * field.grid.cell_area
        for d in detectors
    ])
    background = np.array([d.background_rate * d.dwell_time for d in detectors])
    return signals * scale + background


def expected_counts(field: ConcentrationField, d: DetectorSpec, pc: PhysicsConstants) -> float:
    """Expected counts for a single detector (background included)."""
    return float(expected_counts_array(field, [d], pc)[0])


def sample_counts(mean: float, rng: np.random.Generator) -> int:
    """One Poisson draw around `mean`."""
    if mean < 0.0:
        raise DomainError(f"Poisson mean must be >= 0, got {mean}")
    return int(rng.poisson(mean))


def observe_array(s: Scenario, detectors, pc: PhysicsConstants, grid_cfg: GridConfig,
                  seed) -> MeasurementVector:
    """Simulate one measurement snapshot of the detector array.

    Builds the plume-centered grid at the scenario's observation time,
    computes each detector's expected counts, then draws one Poisson count
    per detector from an independent stream derived from `seed` and the
    detector index.
    """
    grid = grid_for_scenario(s, grid_cfg)
    field = cell_concentrations(s, grid, s.t_obs)
    means = expected_counts_array(field, detectors, pc)

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(len(detectors))
    counts = np.array(
        [sample_counts(means[j], np.random.default_rng(streams[j])) for j in range(len(detectors))],
        dtype=np.int64,
    )
    return MeasurementVector(counts=counts, detector_ids=tuple(range(len(detectors))), t_obs=s.t_obs)


def expected_array_for_scenario(s: Scenario, detectors, pc: PhysicsConstants,
                                grid_cfg: GridConfig) -> np.ndarray:
    """Expected counts per detector for a scenario (no Poisson draw)."""
    grid = grid_for_scenario(s, grid_cfg)
    field = cell_concentrations(s, grid, s.t_obs)
    return expected_counts_array(field, detectors, pc)


def write_measurements(path, m: MeasurementVector, detectors, meta: dict) -> None:
    """Write counts as CSV (detector_id,x,y,counts) plus a JSON sidecar.

    `meta` should carry at least t_obs, winds, the seed, and the physics
    constants so the file is self-describing.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["detector_id", "x", "y", "counts"])
        for did, d, c in zip(m.detector_ids, detectors, m.counts):
            writer.writerow([did, repr(float(d.x)), repr(float(d.y)), int(c)])
    sidecar = dict(meta)
    sidecar.setdefault("format_version", 1)
    sidecar.setdefault("kind", "measurements")
    sidecar["t_obs"] = m.t_obs
    write_json(_sidecar_path(path), sidecar)


def read_measurements(path):
    """Read a measurement CSV and its sidecar.

    Returns (MeasurementVector, detector positions as [(x, y), ...], meta).
    """
    ids, xs, ys, counts = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["detector_id"]))
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            counts.append(int(row["counts"]))
    meta = read_json(_sidecar_path(path))
    m = MeasurementVector(counts=np.array(counts, dtype=np.int64),
                          detector_ids=tuple(ids), t_obs=float(meta["t_obs"]))
    return m, list(zip(xs, ys)), meta


def _sidecar_path(path) -> str:
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".meta.json"
