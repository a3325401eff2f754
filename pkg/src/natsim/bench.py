"""Wall-clock scaling of the two engines with network size.

Each measurement is one fixed-duration evolution from the vacuum on an open
chain (injection at site 0, detection at site N-1, couplings 0.5).  The
first run per size is a discarded warm-up; the median and spread of the
following runs are reported.
"""

from __future__ import annotations

import csv
import hashlib
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy

from .errors import InsufficientData, InvalidParameter, Overflow
from .fock import build_basis
from .lindblad import DensityMatrix, build_liouvillian, evolve
from .moments import build_moment_generator, evolve_moments
from .network import chain_network, validate_network
from .serialization import dump_json, fmt

MODELS = {"fock": "exponential", "moments": "polynomial"}
DEFAULT_T_FINAL = 10.0


class ScalingFit(NamedTuple):
    model: str
    slope: float
    intercept: float
    goodness: float


@dataclass
class ScalingReport:
    engine: str
    sizes: list[int]
    cutoff: int | None
    repetitions: int
    t_final: float
    median: list[float | None]
    spread: list[float | None]
    status: list[str]
    environment: dict = field(default_factory=dict)
    fit: ScalingFit | None = None

    @property
    def model(self) -> str:
        return MODELS[self.engine]

    def valid(self) -> tuple[np.ndarray, np.ndarray]:
        keep = [k for k, s in enumerate(self.status) if s == "ok"]
        return (
            np.array([self.sizes[k] for k in keep], dtype=float),
            np.array([self.median[k] for k in keep], dtype=float),
        )

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "topology": "open chain, couplings 0.5, injection at 0, detection at N-1",
            "sizes": list(self.sizes),
            "cutoff": self.cutoff,
            "repetitions": self.repetitions,
            "t_final": self.t_final,
            "median_seconds": list(self.median),
            "spread_seconds": list(self.spread),
            "status": list(self.status),
            "environment": self.environment,
            "fit": None if self.fit is None else self.fit._asdict(),
            "state_space": state_space_table(self.sizes, self.cutoff) if self.engine == "fock" else None,
        }

    def write(self, directory: str | Path, stem: str = "scaling") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        dump_json(self.to_dict(), directory / f"{stem}.json")
        path = directory / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["N", "median_seconds", "spread", "status"])
            for n, m, s, st in zip(self.sizes, self.median, self.spread, self.status):
                writer.writerow([n, "" if m is None else fmt(m), "" if s is None else fmt(s), st])
        return path


def state_space_table(sizes, cutoff: int) -> list[dict]:
    """Hilbert and Liouville dimensions of the truncated Fock space."""
    rows = []
    for n in sizes:
        dim = (cutoff + 1) ** n
        rows.append({"N": int(n), "hilbert_dim": dim, "liouville_dim": dim * dim})
    return rows


def environment() -> dict:
    return {
        "machine": platform.machine(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "cpu_count": os.cpu_count(),
    }


@contextmanager
def _pinned():
    """Pin the process to a single CPU while timing, where supported."""
    if not hasattr(os, "sched_getaffinity"):
        yield
        return
    before = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(before)})
    except OSError:
        pass
    try:
        yield
    finally:
        try:
            os.sched_setaffinity(0, before)
        except OSError:
            pass


def run_once(engine: str, n_sites: int, cutoff: int, t_final: float):
    """One timed unit of work: build the model and evolve it from the vacuum."""
    net = validate_network(chain_network(n_sites))
    if engine == "fock":
        basis = build_basis(n_sites, cutoff)
        return evolve(build_liouvillian(net, basis), DensityMatrix.vacuum(basis), t_final)
    if engine == "moments":
        return evolve_moments(build_moment_generator(net), None, t_final)
    raise InvalidParameter("engine", f"unknown engine {engine!r}")


def digest(traj) -> str:
    """Hash of the recorded observables, for bit-for-bit comparisons."""
    h = hashlib.sha256()
    for arr in (traj.times, traj.occupations, traj.trace, traj.e_tr):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def complexity_benchmark(
    engine: str,
    sizes,
    cutoff: int = 3,
    repetitions: int = 3,
    t_final: float = DEFAULT_T_FINAL,
) -> ScalingReport:
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])) or not sizes or sizes[0] < 1:
        raise InvalidParameter("sizes", "sizes must be positive and strictly increasing")
    if repetitions < 3:
        raise InvalidParameter("repetitions", "repetitions must be >= 3")
    if engine not in MODELS:
        raise InvalidParameter("engine", f"engine must be one of {sorted(MODELS)}")
    median, spread, status = [], [], []
    with _pinned():
        for n in sizes:
            try:
                reference = digest(run_once(engine, n, cutoff, t_final))  # warm-up
            except Overflow:
                median.append(None)
                spread.append(None)
                status.append("overflow")
                continue
            times = []
            for _ in range(repetitions):
                start = time.perf_counter()
                traj = run_once(engine, n, cutoff, t_final)
                times.append(time.perf_counter() - start)
                if digest(traj) != reference:
                    raise AssertionError(f"benchmark run at N={n} changed the simulation output")
            median.append(float(np.median(times)))
            spread.append(float(np.max(times) - np.min(times)))
            status.append("ok")
    report = ScalingReport(
        engine=engine,
        sizes=sizes,
        cutoff=cutoff if engine == "fock" else None,
        repetitions=repetitions,
        t_final=float(t_final),
        median=median,
        spread=spread,
        status=status,
        environment=environment(),
    )
    try:
        report.fit = scaling_fit(report)
    except InsufficientData:
        report.fit = None
    return report


def fit_scaling(sizes, times, model: str) -> ScalingFit:
    """Least squares of log(time) against N (exponential) or log N (polynomial)."""
    sizes = np.asarray(sizes, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(sizes) < 3:
        raise InsufficientData(f"need at least 3 valid sizes, got {len(sizes)}")
    if np.any(times <= 0):
        raise InsufficientData("timings must be positive")
    if model == "exponential":
        x = sizes
    elif model == "polynomial":
        x = np.log(sizes)
    else:
        raise InvalidParameter("model", f"unknown model {model!r}")
    y = np.log(times)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    goodness = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(model, float(slope), float(intercept), goodness)


def scaling_fit(report: ScalingReport) -> ScalingFit:
    sizes, times = report.valid()
    return fit_scaling(sizes, times, report.model)
