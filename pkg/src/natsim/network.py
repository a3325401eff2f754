"""Cavity-network specifications.

A network is a set of bosonic modes (sites) with resonance frequencies
``omega``, real hopping amplitudes ``g_ij`` on undirected edges, local
dephasing rates, one thermal injection attachment and one detector
attachment.  All quantities are in units of a reference coupling rate
(hbar = 1).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    AsymmetricCoupling,
    ConfigParseError,
    IndexOutOfRange,
    InvalidParameter,
    MissingAttachment,
    NegativeRate,
    NetworkValidationError,
    ValidationError,
)

#: Default (g_01, g_02, g_13, g_23) for the four-site diamond.  Repo
#: convention, not measured values; every entry point accepts an override.
DEFAULT_COUPLINGS: tuple[float, float, float, float] = (0.5, 0.45, 0.4, 0.35)
DIAMOND_EDGES: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 3), (2, 3))

DEFAULT_GAMMA0 = 0.5
DEFAULT_GAMMA_DET = 0.5
DEFAULT_N_THERMAL = 0.1


class InterferenceMode(str, enum.Enum):
    CONSTRUCTIVE = "constructive"
    DESTRUCTIVE = "destructive"

    @classmethod
    def parse(cls, value: "InterferenceMode | str") -> "InterferenceMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidParameter("mode", f"unknown interference mode {value!r}") from None


@dataclass(frozen=True)
class InjectionSpec:
    site: int = 0
    rate_gamma0: float = DEFAULT_GAMMA0
    n_thermal: float = DEFAULT_N_THERMAL


@dataclass(frozen=True)
class DetectionSpec:
    site: int = 3
    rate_gamma_det: float = DEFAULT_GAMMA_DET


@dataclass
class NetworkSpec:
    """Raw, possibly invalid, network description.

    ``coupling`` maps ordered pairs to amplitudes and must hold both
    ``(i, j)`` and ``(j, i)`` with equal values.
    """

    n_sites: int
    omega: list[float]
    coupling: dict[tuple[int, int], float]
    gamma_deph: list[float]
    injection: InjectionSpec | None = None
    detection: DetectionSpec | None = None

    @classmethod
    def from_edges(
        cls,
        n_sites: int,
        edges: Iterable[tuple[int, int, float]],
        *,
        omega: Iterable[float] | None = None,
        gamma_deph: Iterable[float] | None = None,
        injection: InjectionSpec | None = None,
        detection: DetectionSpec | None = None,
    ) -> "NetworkSpec":
        coupling: dict[tuple[int, int], float] = {}
        for i, j, g in edges:
            coupling[(i, j)] = float(g)
            coupling[(j, i)] = float(g)
        return cls(
            n_sites=n_sites,
            omega=[0.0] * n_sites if omega is None else [float(w) for w in omega],
            coupling=coupling,
            gamma_deph=[0.0] * n_sites if gamma_deph is None else [float(x) for x in gamma_deph],
            injection=injection,
            detection=detection,
        )


@dataclass(frozen=True)
class ValidatedNetwork:
    """Immutable network that satisfies every invariant.

    ``edges`` holds each undirected edge once as ``(i, j, g)`` with ``i < j``,
    sorted.
    """

    n_sites: int
    omega: tuple[float, ...]
    edges: tuple[tuple[int, int, float], ...]
    gamma_deph: tuple[float, ...]
    injection: InjectionSpec
    detection: DetectionSpec

    def coupling(self, i: int, j: int) -> float:
        a, b = min(i, j), max(i, j)
        for p, q, g in self.edges:
            if (p, q) == (a, b):
                return g
        return 0.0

    def hopping_matrix(self) -> np.ndarray:
        """Real symmetric matrix with ``omega`` on the diagonal and ``g_ij`` off it."""
        m = np.diag(np.asarray(self.omega, dtype=float))
        for i, j, g in self.edges:
            m[i, j] = g
            m[j, i] = g
        return m

    def loss_rates(self) -> np.ndarray:
        """Per-site total amplitude-damping rate (population decay rate)."""
        loss = np.zeros(self.n_sites)
        loss[self.injection.site] += self.injection.rate_gamma0
        loss[self.detection.site] += 2.0 * self.detection.rate_gamma_det
        return loss

    def components(self) -> list[list[int]]:
        """Connected components of the coupling graph, each sorted."""
        parent = list(range(self.n_sites))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j, g in self.edges:
            if g != 0.0:
                parent[find(i)] = find(j)
        groups: dict[int, list[int]] = {}
        for s in range(self.n_sites):
            groups.setdefault(find(s), []).append(s)
        return sorted(groups.values())

    def lossless_components(self) -> list[list[int]]:
        """Components with no loss channel; each makes the steady state non-unique."""
        loss = self.loss_rates()
        return [c for c in self.components() if not any(loss[s] > 0 for s in c)]

    def conserved_structures(self, tol: float = 1e-10) -> list[str]:
        """Describe every structure whose photon number never relaxes.

        Two kinds are detected: coupling-graph components without any loss
        channel, and dark single-photon modes (eigenvectors of the damped
        hopping matrix with zero decay) that no dephasing channel touches.
        Either one makes the steady state non-unique.
        """
        found = [f"lossless component {c}" for c in self.lossless_components()]
        lossy = {s for c in self.components() if c not in self.lossless_components() for s in c}
        damped = self.hopping_matrix() - 0.5j * np.diag(self.loss_rates())
        vals, vecs = np.linalg.eig(damped)
        scale = max(1.0, float(np.abs(damped).max()))
        for k in np.flatnonzero(np.abs(vals.imag) <= tol * scale):
            v = vecs[:, k]
            support = np.flatnonzero(np.abs(v) > 1e-8)
            if not set(support.tolist()) <= lossy:
                continue  # already reported as a lossless component
            dephased = [s for s in support if self.gamma_deph[s] > 0]
            if dephased and len(support) > 1:
                continue  # dephasing scrambles the mode out of the dark subspace
            amps = ", ".join(f"{v[s]:.3g}" for s in support)
            found.append(f"dark mode on sites {support.tolist()} (amplitudes {amps})")
        return found

    def to_spec(self) -> NetworkSpec:
        return NetworkSpec.from_edges(
            self.n_sites,
            self.edges,
            omega=self.omega,
            gamma_deph=self.gamma_deph,
            injection=self.injection,
            detection=self.detection,
        )

    def to_dict(self) -> dict:
        return network_to_dict(self)


def _site_ok(site, n_sites) -> bool:
    return isinstance(site, (int, np.integer)) and 0 <= site < n_sites


def validate_network(spec: NetworkSpec | ValidatedNetwork) -> ValidatedNetwork:
    """Check every invariant of ``spec``.

    Raises :class:`NetworkValidationError` listing all violations; each entry
    is one of AsymmetricCoupling, NegativeRate, IndexOutOfRange,
    MissingAttachment or InvalidParameter and names the offending field.
    """
    if isinstance(spec, ValidatedNetwork):
        return spec
    errors: list[ValidationError] = []
    n = spec.n_sites
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise NetworkValidationError([InvalidParameter("n_sites", f"n_sites must be >= 1, got {n!r}")])

    for name, values in (("omega", spec.omega), ("gamma_deph", spec.gamma_deph)):
        if len(values) != n:
            errors.append(InvalidParameter(name, f"{name} has {len(values)} entries, expected {n}"))
    for i, w in enumerate(spec.omega):
        if not math.isfinite(w):
            errors.append(InvalidParameter(f"omega[{i}]", f"omega[{i}] is not finite"))
    for i, g in enumerate(spec.gamma_deph):
        if not math.isfinite(g):
            errors.append(InvalidParameter(f"gamma_deph[{i}]", f"gamma_deph[{i}] is not finite"))
        elif g < 0:
            errors.append(NegativeRate(f"gamma_deph[{i}]"))

    edges: dict[tuple[int, int], float] = {}
    for (i, j), g in sorted(spec.coupling.items()):
        if not (_site_ok(i, n) and _site_ok(j, n)):
            errors.append(IndexOutOfRange((i, j)))
            continue
        if i == j:
            errors.append(InvalidParameter((i, j), f"self-coupling ({i}, {j}) is not allowed"))
            continue
        if not math.isfinite(g):
            errors.append(InvalidParameter((i, j), f"coupling ({i}, {j}) is not finite"))
            continue
        mirror = spec.coupling.get((j, i))
        if mirror is None or mirror != g:
            key = (min(i, j), max(i, j))
            if not any(isinstance(e, AsymmetricCoupling) and e.field == key for e in errors):
                errors.append(AsymmetricCoupling(key))
            continue
        edges[(min(i, j), max(i, j))] = float(g)

    inj, det = spec.injection, spec.detection
    if inj is None:
        errors.append(MissingAttachment("injection"))
    else:
        if not _site_ok(inj.site, n):
            errors.append(IndexOutOfRange("injection.site"))
        for name in ("rate_gamma0", "n_thermal"):
            v = getattr(inj, name)
            if not math.isfinite(v):
                errors.append(InvalidParameter(f"injection.{name}"))
            elif v < 0:
                errors.append(NegativeRate(f"injection.{name}"))
    if det is None:
        errors.append(MissingAttachment("detection"))
    else:
        if not _site_ok(det.site, n):
            errors.append(IndexOutOfRange("detection.site"))
        v = det.rate_gamma_det
        if not math.isfinite(v):
            errors.append(InvalidParameter("detection.rate_gamma_det"))
        elif v < 0:
            errors.append(NegativeRate("detection.rate_gamma_det"))

    if errors:
        raise NetworkValidationError(errors)
    return ValidatedNetwork(
        n_sites=int(n),
        omega=tuple(float(w) for w in spec.omega),
        edges=tuple((i, j, g) for (i, j), g in sorted(edges.items())),
        gamma_deph=tuple(float(g) for g in spec.gamma_deph),
        injection=inj,
        detection=det,
    )


def standard_four_site(
    mode: InterferenceMode | str = InterferenceMode.CONSTRUCTIVE,
    omega2: float = 0.0,
    gamma2: float = 0.0,
    couplings: tuple[float, float, float, float] | None = None,
) -> NetworkSpec:
    """The four-site diamond 0-{1,2}-3 with disorder and dephasing on site 2.

    Injection sits on site 0 (Gamma_0 = 0.5, n_th = 0.1), the detector on
    site 3 (Gamma_det = 0.5).  ``couplings`` is ``(g01, g02, g13, g23)``;
    destructive interference flips the sign of g01.
    """
    mode = InterferenceMode.parse(mode)
    if not math.isfinite(omega2):
        raise InvalidParameter("omega2", "omega2 must be finite")
    if not math.isfinite(gamma2) or gamma2 < 0:
        raise InvalidParameter("gamma2", f"gamma2 must be finite and >= 0, got {gamma2!r}")
    g = tuple(float(x) for x in (couplings if couplings is not None else DEFAULT_COUPLINGS))
    if len(g) != 4:
        raise InvalidParameter("couplings", "expected four couplings (g01, g02, g13, g23)")
    if mode is InterferenceMode.DESTRUCTIVE:
        g = (-g[0],) + g[1:]
    return NetworkSpec.from_edges(
        4,
        [(i, j, gij) for (i, j), gij in zip(DIAMOND_EDGES, g)],
        omega=[0.0, 0.0, float(omega2), 0.0],
        gamma_deph=[0.0, 0.0, float(gamma2), 0.0],
        injection=InjectionSpec(0, DEFAULT_GAMMA0, DEFAULT_N_THERMAL),
        detection=DetectionSpec(3, DEFAULT_GAMMA_DET),
    )


def chain_network(n_sites: int, coupling: float = 0.5) -> NetworkSpec:
    """Open chain used for size scaling: inject at site 0, detect at the last site."""
    if n_sites < 1:
        raise InvalidParameter("n_sites", "chain needs at least one site")
    return NetworkSpec.from_edges(
        n_sites,
        [(i, i + 1, coupling) for i in range(n_sites - 1)],
        injection=InjectionSpec(0, DEFAULT_GAMMA0, DEFAULT_N_THERMAL),
        detection=DetectionSpec(n_sites - 1, DEFAULT_GAMMA_DET),
    )


def single_site(
    gamma0: float = DEFAULT_GAMMA0,
    n_thermal: float = DEFAULT_N_THERMAL,
    gamma_det: float = DEFAULT_GAMMA_DET,
    gamma_deph: float = 0.0,
) -> NetworkSpec:
    """One cavity carrying both the injection and the detector."""
    return NetworkSpec.from_edges(
        1,
        [],
        gamma_deph=[gamma_deph],
        injection=InjectionSpec(0, gamma0, n_thermal),
        detection=DetectionSpec(0, gamma_det),
    )


# -- JSON ---------------------------------------------------------------------


def network_to_dict(net: NetworkSpec | ValidatedNetwork) -> dict:
    """Serialize to the documented JSON layout (one entry per undirected edge)."""
    net = validate_network(net)
    return {
        "n_sites": net.n_sites,
        "omega": list(net.omega),
        "couplings": [{"i": i, "j": j, "g": g} for i, j, g in net.edges],
        "gamma_deph": list(net.gamma_deph),
        "injection": {
            "site": net.injection.site,
            "gamma0": net.injection.rate_gamma0,
            "n_th": net.injection.n_thermal,
        },
        "detection": {"site": net.detection.site, "gamma_det": net.detection.rate_gamma_det},
    }


def network_from_dict(data: Mapping) -> NetworkSpec:
    """Parse the JSON layout.  Edges listed once are mirrored; an edge listed
    in both directions with different values is kept asymmetric so that
    validation reports it."""
    try:
        n = int(data["n_sites"])
        omega = [float(x) for x in data.get("omega", [0.0] * n)]
        gamma = [float(x) for x in data.get("gamma_deph", [0.0] * n)]
        coupling: dict[tuple[int, int], float] = {}
        listed: set[tuple[int, int]] = set()
        for entry in data.get("couplings", []):
            i, j, g = int(entry["i"]), int(entry["j"]), float(entry["g"])
            coupling[(i, j)] = g
            listed.add((i, j))
        for (i, j), g in list(coupling.items()):
            if (j, i) not in listed:
                coupling[(j, i)] = g
        inj = data.get("injection")
        det = data.get("detection")
        injection = (
            None
            if inj is None
            else InjectionSpec(int(inj["site"]), float(inj["gamma0"]), float(inj["n_th"]))
        )
        detection = None if det is None else DetectionSpec(int(det["site"]), float(det["gamma_det"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParseError(f"malformed network description: {exc!r}") from exc
    return NetworkSpec(n, omega, coupling, gamma, injection, detection)


def load_network(path: str | Path) -> NetworkSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc
    return network_from_dict(data)


def save_network(net: NetworkSpec | ValidatedNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2, sort_keys=True) + "\n")
