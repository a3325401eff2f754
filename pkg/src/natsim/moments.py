"""Second-moment engine.

For ``C[i, j] = <a_i^dag a_j>`` the master equation closes exactly:

    dC/dt = i (M^T C - C M^T) - 1/2 {D, C} - G o C + P

with ``M`` the single-particle hopping matrix, ``D = diag(loss)``,
``G[i, j] = gamma_i + gamma_j`` off the diagonal (zero on it) and
``P = diag(pump)``.  First moments and anomalous moments <a_i a_j> are
zero from the vacuum and never sourced, so they are not tracked.  The
derivation is written out in docs/moment_closure.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, InvariantViolation, SingularSystem
from .integrate import DEFAULT_METHOD, MIN_SAMPLES, integrate_sampled
from .network import NetworkSpec, ValidatedNetwork, validate_network
from .trajectory import Trajectory


@dataclass
class MomentMatrix:
    C: np.ndarray

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=complex)
        if self.C.ndim != 2 or self.C.shape[0] != self.C.shape[1]:
            raise DimensionMismatch(f"moment matrix must be square, got {self.C.shape}")

    @property
    def n_sites(self) -> int:
        return self.C.shape[0]

    @classmethod
    def vacuum(cls, n_sites: int) -> "MomentMatrix":
        return cls(np.zeros((n_sites, n_sites), dtype=complex))

    def occupations(self) -> np.ndarray:
        return self.C.diagonal().real.copy()

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.C + self.C.conj().T))[0])

    def check(self, *, hermiticity: float = 1e-12, positivity: float = -1e-10) -> None:
        err = float(np.abs(self.C - self.C.conj().T).max(initial=0.0))
        if err > hermiticity:
            raise InvariantViolation(f"moment matrix not Hermitian (max deviation {err:.3g})")
        lam = self.min_eigenvalue()
        if lam < positivity:
            raise InvariantViolation(f"moment matrix has negative eigenvalue {lam:.3g}")


@dataclass(frozen=True, eq=False)
class MomentGenerator:
    M: np.ndarray
    loss: np.ndarray
    pump: np.ndarray
    deph: np.ndarray
    network: ValidatedNetwork | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("M", "loss", "pump", "deph"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if not np.allclose(self.M, self.M.conj().T, rtol=0, atol=0):
            raise InvalidParameter("M", "hopping matrix must be Hermitian")
        for name in ("loss", "pump", "deph"):
            if np.any(getattr(self, name) < 0):
                raise InvalidParameter(name, f"{name} rates must be >= 0")

    @property
    def n_sites(self) -> int:
        return self.M.shape[0]

    @cached_property
    def damping(self) -> np.ndarray:
        g = self.deph[:, None] + self.deph[None, :]
        np.fill_diagonal(g, 0.0)
        return g

    def apply(self, C: np.ndarray) -> np.ndarray:
        """dC/dt at C."""
        mt = self.M.T
        out = 1j * (mt @ C - C @ mt)
        out -= 0.5 * (self.loss[:, None] + self.loss[None, :]) * C
        out -= self.damping * C
        out[np.diag_indices(self.n_sites)] += self.pump
        return out

    @cached_property
    def matrix(self) -> np.ndarray:
        """Homogeneous part as an ``n^2 x n^2`` matrix on column-stacked C."""
        n = self.n_sites
        eye = np.eye(n)
        mt = self.M.T
        lin = 1j * (np.kron(eye, mt) - np.kron(self.M, eye))
        decay = 0.5 * (self.loss[:, None] + self.loss[None, :]) + self.damping
        lin -= np.diag(decay.reshape(-1, order="F"))
        return lin

    @property
    def source(self) -> np.ndarray:
        return np.diag(self.pump).astype(complex).reshape(-1, order="F")


def _validated(network) -> ValidatedNetwork:
    return validate_network(network) if isinstance(network, NetworkSpec) else network


def build_moment_generator(network: ValidatedNetwork) -> MomentGenerator:
    network = _validated(network)
    n = network.n_sites
    pump = np.zeros(n)
    inj = network.injection
    pump[inj.site] = inj.n_thermal * inj.rate_gamma0
    return MomentGenerator(
        M=network.hopping_matrix(),
        loss=network.loss_rates(),
        pump=pump,
        deph=np.asarray(network.gamma_deph, dtype=float),
        network=network,
        metadata={"engine": "moments"},
    )


def evolve_moments(
    gen: MomentGenerator,
    C0: MomentMatrix | np.ndarray | None,
    t_final: float,
    tol: float = 1e-8,
    *,
    min_samples: int = MIN_SAMPLES,
    method: str = DEFAULT_METHOD,
) -> Trajectory:
    """Integrate the moment equations; ``C0=None`` starts from the vacuum.

    The returned trajectory carries the full ``C(t)`` in ``moments`` and
    records a trace column of ones (the moment engine has no density matrix).
    """
    n = gen.n_sites
    C0 = MomentMatrix.vacuum(n) if C0 is None else C0
    C0 = C0 if isinstance(C0, MomentMatrix) else MomentMatrix(C0)
    if C0.n_sites != n:
        raise DimensionMismatch(f"C0 is {C0.n_sites}x{C0.n_sites}, generator has {n} sites")
    C0.check()
    net = gen.network
    det_site = net.detection.site if net is not None else 0
    gamma_det = net.detection.rate_gamma_det if net is not None else 0.0

    def rhs(_t, y):
        return gen.apply(y.reshape(n, n, order="F")).reshape(-1, order="F")

    def observe(ys):
        return ys.T  # full moment matrices, one row per sample

    def integrand(obs):
        return 2.0 * gamma_det * obs[:, det_site + det_site * n].real

    res = integrate_sampled(
        rhs, C0.C.reshape(-1, order="F"), t_final, observe,
        tol=tol, integrand=integrand, min_samples=min_samples, method=method,
    )
    moments = res.observables.reshape(-1, n, n).transpose(0, 2, 1)  # undo column stacking
    moments = 0.5 * (moments + moments.conj().transpose(0, 2, 1))
    occ = np.einsum("sii->si", moments).real
    meta = dict(gen.metadata)
    meta.update({
        "tol": tol,
        "t_final": float(t_final),
        "integrator": method,
        "nfev": res.nfev,
        "quadrature_error": res.quadrature_error,
    })
    if net is not None:
        meta["network"] = net.to_dict()
    return Trajectory(
        times=res.times,
        occupations=occ,
        trace=np.ones(len(res.times)),
        detection_site=det_site,
        gamma_det=gamma_det,
        final_state=MomentMatrix(moments[-1]),
        moments=moments,
        metadata=meta,
    )


def steady_moments(gen: MomentGenerator) -> MomentMatrix:
    """Solve dC/dt = 0 as a dense linear system in n^2 unknowns."""
    n = gen.n_sites
    if gen.network is not None:
        structures = gen.network.conserved_structures()
        if structures:
            raise SingularSystem("moment equations are singular: " + "; ".join(structures))
    if not np.any(gen.pump):
        return MomentMatrix.vacuum(n)
    A = gen.matrix
    b = -gen.source
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"moment equations are singular: {exc}") from exc
    scale = max(1.0, float(np.abs(A).sum(axis=0).max()))
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= 1e-14 * scale:
            break
        x = x + np.linalg.solve(A, r)
    C = x.reshape(n, n, order="F")
    C = 0.5 * (C + C.conj().T)
    resid = float(np.linalg.norm(gen.apply(C)))
    if not resid <= 1e-12 * scale:
        raise SingularSystem(f"moment steady state residual {resid:.3g} (ill-conditioned system)")
    return MomentMatrix(C)


def transmission_from_moments(C_ss: MomentMatrix, network: ValidatedNetwork) -> float:
    network = _validated(network)
    k = network.detection.site
    return max(0.0, 2.0 * network.detection.rate_gamma_det * float(C_ss.C[k, k].real))


def moment_transmission(network) -> float:
    """Convenience: steady transmission of ``network`` from the moment engine."""
    network = _validated(network)
    return transmission_from_moments(steady_moments(build_moment_generator(network)), network)
