"""Sampled time evolution and the transferred-energy observable."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serialization import dump_json, fmt


class TransferredEnergy:
    """Cumulative photon count absorbed by the detector.

    ``values[s]`` is the trapezoidal integral of ``2 * gamma_det * n_k`` from
    0 to ``times[s]``; calling the object interpolates linearly between
    samples.
    """

    def __init__(self, times: np.ndarray, sink_occupation: np.ndarray, gamma_det: float):
        self.times = np.asarray(times, dtype=float)
        rate = 2.0 * gamma_det * np.clip(np.asarray(sink_occupation, dtype=float), 0.0, None)
        steps = 0.5 * (rate[1:] + rate[:-1]) * np.diff(self.times)
        self.values = np.concatenate([[0.0], np.cumsum(steps)])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def late_slope(self, fraction: float = 0.25) -> float:
        """Least-squares slope over the last ``fraction`` of the record."""
        start = int(len(self.times) * (1.0 - fraction))
        t, e = self.times[start:], self.values[start:]
        return float(np.polyfit(t, e, 1)[0])


def transferred_energy(traj: "Trajectory", gamma_det: float | None = None) -> TransferredEnergy:
    """E_tr(t) of ``traj``; ``gamma_det`` defaults to the trajectory's own rate."""
    rate = traj.gamma_det if gamma_det is None else gamma_det
    return TransferredEnergy(traj.times, traj.sink_occupation, rate)


@dataclass
class Trajectory:
    times: np.ndarray
    occupations: np.ndarray  # (n_samples, n_sites), real
    trace: np.ndarray
    detection_site: int
    gamma_det: float
    final_state: object = None
    moments: np.ndarray | None = None  # (n_samples, n, n) for the moment engine
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.occupations = np.asarray(self.occupations, dtype=float)
        self.trace = np.asarray(self.trace, dtype=float)
        self.energy = transferred_energy(self)

    @property
    def n_sites(self) -> int:
        return self.occupations.shape[1]

    @property
    def sink_occupation(self) -> np.ndarray:
        return self.occupations[:, self.detection_site]

    @property
    def e_tr(self) -> np.ndarray:
        return self.energy.values

    def columns(self) -> list[str]:
        return ["time"] + [f"n_{i}" for i in range(self.n_sites)] + ["trace", "E_tr"]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns())
            for s, t in enumerate(self.times):
                row = [t, *self.occupations[s], self.trace[s], self.e_tr[s]]
                writer.writerow([fmt(x) for x in row])

    def write(self, directory: str | Path, stem: str = "trajectory", extra: dict | None = None) -> Path:
        """Write ``<stem>.csv`` and a ``<stem>.json`` metadata sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        self.to_csv(csv_path)
        meta = dict(self.metadata)
        meta.update(extra or {})
        meta["columns"] = self.columns()
        meta["n_samples"] = len(self.times)
        dump_json(meta, directory / f"{stem}.json")
        return csv_path


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}


def read_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
