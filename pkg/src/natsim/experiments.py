"""Transmission sweeps, ensemble averaging, NAT-peak detection and transient fits.

Curves are normalized to the constructive network without disorder and
without dephasing.  Each sweep point is an independent steady-state solve;
results are keyed by grid coordinates, so the output does not depend on the
execution order or the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import curve_fit

from . import __version__
from .errors import InvalidParameter, NoTransientWindow, TooFewPoints
from .lindblad import fock_transmission
from .moments import moment_transmission
from .network import DEFAULT_COUPLINGS, InterferenceMode, standard_four_site, validate_network
from .serialization import dump_json, fmt
from .trajectory import Trajectory

ENGINES = ("fock", "moments", "both")
DEFAULT_DISORDER_GRID = tuple(0.25 * k for k in range(9))
DEFAULT_DEPHASING_GRID = tuple(k / 10 for k in range(11))
#: Accepted omega_2 values; covers the sweep range [0, 2], the omega_2 = 3
#: time-evolution run, and symmetric ensemble windows around zero.
DISORDER_RANGE = (-4.0, 4.0)
DEFAULT_MARGIN = 0.01


def _grid(values, name: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise InvalidParameter(name, f"{name} must not be empty")
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParameter(name, f"{name} must contain finite values")
    return vals


@dataclass(frozen=True)
class SweepSpec:
    mode: InterferenceMode = InterferenceMode.CONSTRUCTIVE
    disorder_grid: tuple[float, ...] = DEFAULT_DISORDER_GRID
    dephasing_grid: tuple[float, ...] = DEFAULT_DEPHASING_GRID
    engine: str = "fock"
    cutoff: int = 3
    couplings: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", InterferenceMode.parse(self.mode))
        object.__setattr__(self, "disorder_grid", _grid(self.disorder_grid, "disorder_grid"))
        object.__setattr__(self, "dephasing_grid", _grid(self.dephasing_grid, "dephasing_grid"))
        lo, hi = DISORDER_RANGE
        if any(not lo <= w <= hi for w in self.disorder_grid):
            raise InvalidParameter("disorder_grid", f"disorder values must lie in [{lo}, {hi}]")
        if any(g < 0 for g in self.dephasing_grid):
            raise InvalidParameter("dephasing_grid", "dephasing values must be >= 0")
        if self.engine not in ENGINES:
            raise InvalidParameter("engine", f"engine must be one of {ENGINES}")
        if int(self.cutoff) < 1:
            raise InvalidParameter("cutoff", "cutoff must be >= 1")
        object.__setattr__(self, "cutoff", int(self.cutoff))
        if self.couplings is not None:
            object.__setattr__(self, "couplings", tuple(float(g) for g in self.couplings))

    @property
    def resolved_couplings(self) -> tuple[float, ...]:
        return DEFAULT_COUPLINGS if self.couplings is None else self.couplings

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "disorder_grid": list(self.disorder_grid),
            "dephasing_grid": list(self.dephasing_grid),
            "engine": self.engine,
            "cutoff": self.cutoff,
            "couplings": list(self.resolved_couplings),
        }


@dataclass
class TransmissionCurve:
    abscissa: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.raw = np.asarray(self.raw, dtype=float)
        self.normalized = np.asarray(self.normalized, dtype=float)
        if not len(self.abscissa) == len(self.raw) == len(self.normalized):
            raise InvalidParameter("curve", "abscissa, raw and normalized lengths differ")

    @classmethod
    def from_raw(cls, abscissa, raw, baseline: float, metadata: dict | None = None) -> "TransmissionCurve":
        if not baseline > 0:
            raise InvalidParameter("baseline", "baseline transmission must be > 0")
        raw = np.asarray(raw, dtype=float)
        meta = dict(metadata or {})
        meta["baseline"] = float(baseline)
        return cls(abscissa, raw, raw / baseline, meta)

    @property
    def baseline(self) -> float:
        return float(self.metadata["baseline"])

    def write(self, directory: str | Path, stem: str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["abscissa", "raw", "normalized"])
            for row in zip(self.abscissa, self.raw, self.normalized):
                writer.writerow([fmt(x) for x in row])
        dump_json(self.metadata, directory / f"{stem}.json")
        return path

    @classmethod
    def read(cls, csv_path: str | Path) -> "TransmissionCurve":
        csv_path = Path(csv_path)
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array(rows[1:], dtype=float).reshape(-1, 3)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        return cls(body[:, 0], body[:, 1], body[:, 2], meta)


# -- point evaluation -----------------------------------------------------------


def point_transmission(
    mode,
    omega2: float,
    gamma2: float,
    engine: str = "fock",
    cutoff: int = 3,
    couplings=None,
) -> float:
    """Steady-state transmission of the standard four-site network.

    With ``engine="both"`` the Fock value is returned; :func:`point_pair`
    gives both.
    """
    net = validate_network(standard_four_site(mode, omega2, gamma2, couplings))
    if engine == "moments":
        return moment_transmission(net)
    if engine in ("fock", "both"):
        return fock_transmission(net, cutoff)
    raise InvalidParameter("engine", f"engine must be one of {ENGINES}")


def point_pair(mode, omega2, gamma2, cutoff=3, couplings=None) -> tuple[float, float]:
    """(fock, moments) transmissions at one parameter point."""
    net = validate_network(standard_four_site(mode, omega2, gamma2, couplings))
    return fock_transmission(net, cutoff), moment_transmission(net)


@lru_cache(maxsize=None)
def _baseline(engine: str, couplings: tuple[float, ...], cutoff: int) -> float:
    return point_transmission(InterferenceMode.CONSTRUCTIVE, 0.0, 0.0, engine, cutoff, couplings)


def baseline_transmission(engine: str = "fock", couplings=None, cutoff: int = 3) -> float:
    """Constructive, disorder-free, dephasing-free transmission (cached)."""
    couplings = DEFAULT_COUPLINGS if couplings is None else tuple(float(g) for g in couplings)
    if engine == "moments":
        cutoff = 0  # the moment engine has no truncation
    return _baseline("fock" if engine == "both" else engine, couplings, int(cutoff))


def _evaluate(task):
    mode, omega2, gamma2, engine, cutoff, couplings = task
    if engine == "both":
        return point_pair(mode, omega2, gamma2, cutoff, couplings)
    return (point_transmission(mode, omega2, gamma2, engine, cutoff, couplings),)


def evaluate_grid(spec: SweepSpec, points, workers: int = 1) -> dict:
    """Map each ``(omega2, gamma2)`` in ``points`` to its transmission tuple."""
    points = sorted(set((float(w), float(g)) for w, g in points))
    tasks = [(spec.mode, w, g, spec.engine, spec.cutoff, spec.resolved_couplings) for w, g in points]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_evaluate, tasks))
    else:
        values = [_evaluate(t) for t in tasks]
    return dict(zip(points, values))


def _curve_metadata(spec: SweepSpec, axis: str, fixed_name: str, fixed: float, baseline: float) -> dict:
    return {
        "sweep": spec.to_dict(),
        "axis": axis,
        fixed_name: fixed,
        "engine": spec.engine,
        "cutoff": spec.cutoff if spec.engine != "moments" else None,
        "baseline": baseline,
        "version": __version__,
    }


def _sweep(spec: SweepSpec, axis: str, workers: int) -> list[TransmissionCurve]:
    grid = evaluate_grid(spec, [(w, g) for w in spec.disorder_grid for g in spec.dephasing_grid], workers)
    baseline = baseline_transmission(spec.engine, spec.resolved_couplings, spec.cutoff)
    if axis == "gamma2":
        outer, inner, fixed_name = spec.disorder_grid, spec.dephasing_grid, "omega2"
        key = lambda fixed, x: (fixed, x)  # noqa: E731
    else:
        outer, inner, fixed_name = spec.dephasing_grid, spec.disorder_grid, "gamma2"
        key = lambda fixed, x: (x, fixed)  # noqa: E731
    curves = []
    for fixed in outer:
        values = [grid[key(fixed, x)] for x in inner]
        meta = _curve_metadata(spec, axis, fixed_name, fixed, baseline)
        if spec.engine == "both":
            moments = np.array([v[1] for v in values])
            fock = np.array([v[0] for v in values])
            meta["moments_raw"] = moments.tolist()
            meta["max_relative_engine_difference"] = float(np.max(np.abs(fock - moments) / moments))
        curves.append(TransmissionCurve.from_raw(inner, [v[0] for v in values], baseline, meta))
    return curves


def sweep_dephasing(spec: SweepSpec, workers: int = 1) -> list[TransmissionCurve]:
    """One curve over ``dephasing_grid`` per value of ``disorder_grid``."""
    return _sweep(spec, "gamma2", workers)


def sweep_disorder(spec: SweepSpec, workers: int = 1) -> list[TransmissionCurve]:
    """One curve over ``disorder_grid`` per value of ``dephasing_grid``."""
    return _sweep(spec, "omega2", workers)


def write_curves(curves: list[TransmissionCurve], directory: str | Path) -> list[Path]:
    """Write ``curve_<k>.csv`` plus sidecar per curve into one sweep directory."""
    return [c.write(directory, f"curve_{k:03d}") for k, c in enumerate(curves)]


# -- ensemble averaging ---------------------------------------------------------


class EnsembleResult(NamedTuple):
    mean: float
    disorder_values: np.ndarray
    transmissions: np.ndarray


def ensemble_samples(delta0: float, width: float, samples: int, seed: int | None = None) -> np.ndarray:
    """Disorder values in ``[delta0 - width/2, delta0 + width/2]``.

    A uniform grid (endpoints included) by default; seeded uniform random
    draws when ``seed`` is given.  One sample, or zero width, gives the
    center alone.
    """
    if not width >= 0:
        raise InvalidParameter("width", "width must be >= 0")
    if int(samples) < 1:
        raise InvalidParameter("samples", "samples must be >= 1")
    if width == 0 or samples == 1:
        return np.array([float(delta0)])
    lo, hi = delta0 - 0.5 * width, delta0 + 0.5 * width
    if seed is None:
        return np.linspace(lo, hi, int(samples))
    return np.random.default_rng(seed).uniform(lo, hi, int(samples))


def ensemble_average(
    mode,
    delta0: float,
    width: float,
    samples: int = 21,
    engine: str = "fock",
    *,
    cutoff: int = 3,
    couplings=None,
    seed: int | None = None,
    workers: int = 1,
) -> EnsembleResult:
    values = ensemble_samples(delta0, width, samples, seed)
    spec = SweepSpec(mode, tuple(values), (0.0,), engine, cutoff, couplings)
    grid = evaluate_grid(spec, [(w, 0.0) for w in values], workers)
    trans = np.array([grid[(float(w), 0.0)][0] for w in values])
    mean = float(trans[0]) if len(trans) == 1 else float(np.mean(trans))
    return EnsembleResult(mean, values, trans)


def ensemble_average_transmission(
    mode,
    delta0: float,
    width: float,
    samples: int = 21,
    engine: str = "fock",
    **kwargs,
) -> float:
    """Mean transmission over static disorder omega_2 in a window around ``delta0``.

    All members have gamma_2 = 0: the spread of static detunings stands in
    for dynamical disorder, as in an experiment that averages over a range
    of settings.
    """
    return ensemble_average(mode, delta0, width, samples, engine, **kwargs).mean


# -- curve analysis ---------------------------------------------------------------


class NatPeak(NamedTuple):
    abscissa: float
    value: float


def detect_nat_peak(curve: TransmissionCurve, margin: float = DEFAULT_MARGIN) -> NatPeak | None:
    """Interior maximum of the normalized curve, or None.

    The peak must exceed both endpoint values by more than ``margin`` (in
    units of the baseline).  Ties go to the smaller abscissa.
    """
    if len(curve.abscissa) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(curve.abscissa)}")
    order = np.argsort(curve.abscissa, kind="stable")
    x, y = curve.abscissa[order], curve.normalized[order]
    k = int(np.argmax(y))  # first occurrence, i.e. smallest abscissa
    if k == 0 or k == len(y) - 1:
        return None
    if y[k] - y[0] > margin and y[k] - y[-1] > margin:
        return NatPeak(float(x[k]), float(y[k]))
    return None


class TransientFit(NamedTuple):
    rate: float
    amplitude: float
    goodness: float


def _saturating(t, a, b):
    return a * -np.expm1(-b * t)


def transient_fit(
    traj: Trajectory,
    threshold: float = 0.95,
    steady_value: float | None = None,
) -> TransientFit:
    """Fit ``|n_k(t) - n_k(0)|`` to ``a (1 - exp(-b t))`` over the transient.

    The window ends where the deviation first reaches ``threshold`` of its
    final value (``steady_value`` if given, else the last sample).  The
    goodness is the coefficient of determination on that window.
    """
    t = traj.times
    n = traj.sink_occupation
    final = n[-1] if steady_value is None else steady_value
    dev = np.abs(n - n[0])
    total = abs(final - n[0])
    if total <= 1e-9 * max(1.0, abs(final)):
        raise NoTransientWindow("sink occupation does not change along the trajectory")
    reached = np.flatnonzero(dev >= threshold * total)
    end = int(reached[0]) if len(reached) else len(t) - 1
    if end < 4:
        raise NoTransientWindow("transient window holds fewer than 5 samples")
    tw, yw = t[: end + 1], dev[: end + 1]
    b0 = -math.log(1.0 - threshold) / max(tw[-1], 1e-12)
    try:
        (a, b), _ = curve_fit(_saturating, tw, yw, p0=(total, b0), maxfev=10_000)
    except RuntimeError as exc:
        raise NoTransientWindow(f"exponential fit did not converge: {exc}") from exc
    resid = yw - _saturating(tw, a, b)
    ss_tot = float(np.sum((yw - yw.mean()) ** 2))
    goodness = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return TransientFit(float(b), float(a), goodness)
