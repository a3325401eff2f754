"""Full density-matrix engine.

The generator is

    L(rho) = -i[H, rho] + sum_J (J rho J^dag - 1/2 {J^dag J, rho})

with jump operators
    sqrt(n_th Gamma_0) a_0^dag, sqrt((n_th + 1) Gamma_0) a_0   (thermal injection)
    sqrt(2 Gamma_det) a_k                                      (detector)
    sqrt(2 gamma_i) n_i                                        (dephasing)

Vectorization is column stacking: ``vec(rho)[i + j*dim] = rho[i, j]``, so
``vec(A rho B) = (B^T kron A) vec(rho)``.

Every jump operator changes the total photon number by a fixed amount and H
conserves it, so the generator never mixes blocks ``rho[N, M]`` with
different ``N - M``.  Time evolution and steady-state solves run on those
blocks directly (:class:`GradedGenerator`); the explicit sparse matrix is
available for small systems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import ztrsyl

from .errors import (
    DegenerateSteadyState,
    DimensionMismatch,
    InvalidParameter,
    InvariantViolation,
    SingularSolve,
    SolverError,
)
from .fock import (
    FockBasis,
    SparseOperator,
    canonical,
    number_operator,
    site_annihilator,
    hamiltonian_matrix,
)
from .integrate import DEFAULT_METHOD, MIN_SAMPLES, integrate_sampled
from .network import NetworkSpec, ValidatedNetwork, validate_network
from .trajectory import Trajectory

log = logging.getLogger(__name__)

#: Sector size above which steady_state switches from sparse LU to Krylov.
DIRECT_SOLVE_LIMIT = 2500


# -- states -------------------------------------------------------------------


@dataclass
class DensityMatrix:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2 or self.data.shape[0] != self.data.shape[1]:
            raise DimensionMismatch(f"density matrix must be square, got {self.data.shape}")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @classmethod
    def vacuum(cls, basis: FockBasis) -> "DensityMatrix":
        rho = np.zeros((basis.dim, basis.dim), dtype=complex)
        rho[0, 0] = 1.0
        return cls(rho)

    @classmethod
    def fock_state(cls, basis: FockBasis, occupation) -> "DensityMatrix":
        rho = np.zeros((basis.dim, basis.dim), dtype=complex)
        s = basis.index(occupation)
        rho[s, s] = 1.0
        return cls(rho)

    @classmethod
    def maximally_mixed(cls, basis: FockBasis) -> "DensityMatrix":
        return cls(np.eye(basis.dim, dtype=complex) / basis.dim)

    @classmethod
    def from_vec(cls, vec: np.ndarray) -> "DensityMatrix":
        dim = int(round(np.sqrt(len(vec))))
        return cls(np.asarray(vec).reshape(dim, dim, order="F"))

    def vec(self) -> np.ndarray:
        return self.data.reshape(-1, order="F")

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def expect(self, op) -> complex:
        """Tr(rho op)."""
        if sp.issparse(op):
            return complex(op.multiply(self.data.T).sum())
        return complex(np.sum(np.asarray(op) * self.data.T))

    def occupations(self, basis: FockBasis) -> np.ndarray:
        return np.real(np.diag(self.data)) @ basis.occupations

    def check(
        self,
        *,
        hermiticity: float = 1e-10,
        trace: float = 1e-10,
        positivity: float = -1e-8,
    ) -> None:
        herm_err = float(np.abs(self.data - self.data.conj().T).max())
        if herm_err > hermiticity:
            raise InvariantViolation(f"density matrix not Hermitian (max deviation {herm_err:.3g})")
        tr_err = abs(self.trace() - 1.0)
        if tr_err > trace:
            raise InvariantViolation(f"trace deviates from 1 by {tr_err:.3g}")
        lam = self.min_eigenvalue()
        if lam < positivity:
            raise InvariantViolation(f"negative eigenvalue {lam:.3g}")


# -- generator ----------------------------------------------------------------


@dataclass(frozen=True)
class Jump:
    name: str
    op: SparseOperator
    shift: int  # change of total photon number


class BlockLayout:
    """Flat packing of the blocks ``rho[N, M]`` with ``N - M`` in a fixed set."""

    def __init__(self, groups: list[np.ndarray], differences):
        self.groups = groups
        top = len(groups) - 1
        qs = sorted(set(int(q) for q in differences))
        self.differences = tuple(qs)
        self.keys = [(n, n - q) for q in qs for n in range(top + 1) if 0 <= n - q <= top]
        self.keys.sort()
        self.shapes = [(len(groups[n]), len(groups[m])) for n, m in self.keys]
        sizes = [a * b for a, b in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.size = int(self.offsets[-1])
        self.index = {key: k for k, key in enumerate(self.keys)}

    def unpack(self, x: np.ndarray) -> dict:
        return {
            key: x[self.offsets[k] : self.offsets[k + 1]].reshape(self.shapes[k])
            for k, key in enumerate(self.keys)
        }

    def pack(self, blocks: dict) -> np.ndarray:
        out = np.empty(self.size, dtype=complex)
        for k, key in enumerate(self.keys):
            out[self.offsets[k] : self.offsets[k + 1]] = blocks[key].ravel()
        return out

    def from_dense(self, rho: np.ndarray) -> np.ndarray:
        return self.pack({(n, m): rho[np.ix_(self.groups[n], self.groups[m])] for n, m in self.keys})

    def to_dense(self, x: np.ndarray, dim: int) -> np.ndarray:
        rho = np.zeros((dim, dim), dtype=complex)
        for (n, m), blk in self.unpack(x).items():
            rho[np.ix_(self.groups[n], self.groups[m])] = blk
        return rho

    @cached_property
    def diagonal_positions(self) -> np.ndarray:
        """Flat position of ``rho[s, s]`` for every basis state ``s`` (needs N - M = 0)."""
        if 0 not in self.differences:
            raise InvalidParameter("layout", "layout holds no population blocks")
        dim = sum(len(g) for g in self.groups)
        pos = np.empty(dim, dtype=int)
        for n, g in enumerate(self.groups):
            k = self.index[(n, n)]
            c = len(g)
            pos[g] = self.offsets[k] + np.arange(c) * (c + 1)
        return pos


class GradedGenerator:
    """Generator acting blockwise on ``rho[N, M]`` (N, M total photon numbers)."""

    def __init__(self, basis: FockBasis, hamiltonian: SparseOperator, jumps: tuple[Jump, ...]):
        total = basis.total_number
        self.top = int(total.max())
        self.groups = [np.flatnonzero(total == n) for n in range(self.top + 1)]
        k_op = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for j in jumps:
            k_op = k_op + j.op.conj().T @ j.op
        eff = (-1j * hamiltonian - 0.5 * k_op).tocsr()
        self.eff = [eff[g][:, g].toarray() for g in self.groups]
        self.eff_dag = [b.conj().T for b in self.eff]
        # per jump: target block n -> (source block, J block, J block^dag)
        self.jumps = []
        for j in jumps:
            blocks = {}
            for n in range(self.top + 1):
                m = n - j.shift
                if 0 <= m <= self.top:
                    blk = j.op[self.groups[n]][:, self.groups[m]].toarray()
                    if np.any(blk):
                        blocks[n] = (m, blk, blk.conj().T)
            self.jumps.append(blocks)

    def layout(self, differences=(0,)) -> BlockLayout:
        return BlockLayout(self.groups, differences)

    def apply(self, blocks: dict) -> dict:
        out = {}
        for (n, m), x in blocks.items():
            out[(n, m)] = self.eff[n] @ x + x @ self.eff_dag[m]
        for jb in self.jumps:
            for (n, m), acc in out.items():
                if n in jb and m in jb:
                    src_n, jn, _ = jb[n]
                    src_m, _, jm_dag = jb[m]
                    x = blocks.get((src_n, src_m))
                    if x is not None:
                        acc += jn @ x @ jm_dag
        return out

    @cached_property
    def _schur(self):
        return [sla.schur(a, output="complex") for a in self.eff]

    def solve_no_jump(self, blocks: dict) -> dict:
        """Solve ``eff X + X eff^dag = Y`` on population blocks (preconditioner)."""
        out = {}
        for (n, m), y in blocks.items():
            tn, qn = self._schur[n]
            tm, qm = self._schur[m]
            c = qn.conj().T @ y @ qm
            x, scale, info = ztrsyl(tn, tm, c, trana="N", tranb="C", isgn=1)
            if info < 0:
                raise SolverError(f"ztrsyl failed with info={info}")
            out[(n, m)] = qn @ (x / scale) @ qm.conj().T
        return out


@dataclass(frozen=True, eq=False)
class Superoperator:
    basis: FockBasis
    hamiltonian: SparseOperator
    jumps: tuple[Jump, ...]
    network: ValidatedNetwork | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def dim2(self) -> int:
        return self.basis.dim**2

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Explicit ``dim**2 x dim**2`` column-stacking matrix."""
        ident = sp.identity(self.dim, format="csr", dtype=complex)
        h = self.hamiltonian
        out = -1j * (sp.kron(ident, h) - sp.kron(h.T, ident))
        for j in self.jumps:
            jdj = j.op.conj().T @ j.op
            out = out + sp.kron(j.op.conj(), j.op) - 0.5 * sp.kron(ident, jdj) - 0.5 * sp.kron(jdj.T, ident)
        return canonical(out)

    @cached_property
    def graded(self) -> GradedGenerator:
        return GradedGenerator(self.basis, self.hamiltonian, self.jumps)

    def apply(self, rho) -> np.ndarray:
        """L(rho) for a dense ``dim x dim`` matrix."""
        rho = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
        h = self.hamiltonian
        out = -1j * (h @ rho - (h.T @ rho.T).T)
        for j in self.jumps:
            jd = j.op.conj().T
            jdj = jd @ j.op
            out = out + j.op @ (jd.T @ rho.T).T - 0.5 * (jdj @ rho + (jdj.T @ rho.T).T)
        return np.asarray(out)

    @cached_property
    def scale(self) -> float:
        """Upper bound of the generator's induced 1-norm, used for residual tests."""
        bound = 2.0 * spla.norm(self.hamiltonian, 1)
        for j in self.jumps:
            bound += 2.0 * spla.norm(j.op, 1) ** 2
        return float(bound)

    def residual(self, rho) -> float:
        return float(np.linalg.norm(self.apply(rho)))


def _validated(network) -> ValidatedNetwork:
    return validate_network(network) if isinstance(network, NetworkSpec) else network


def build_jumps(network: ValidatedNetwork, basis: FockBasis) -> tuple[Jump, ...]:
    inj, det = network.injection, network.detection
    a_inj = site_annihilator(basis, inj.site)
    jumps = []
    gain = inj.n_thermal * inj.rate_gamma0
    if gain > 0:
        jumps.append(Jump("injection_gain", canonical(np.sqrt(gain) * a_inj.conj().T), +1))
    if inj.rate_gamma0 > 0:
        loss = (inj.n_thermal + 1.0) * inj.rate_gamma0
        jumps.append(Jump("injection_loss", canonical(np.sqrt(loss) * a_inj), -1))
    if det.rate_gamma_det > 0:
        a_det = site_annihilator(basis, det.site)
        jumps.append(Jump("detection", canonical(np.sqrt(2.0 * det.rate_gamma_det) * a_det), -1))
    for i, gamma in enumerate(network.gamma_deph):
        if gamma > 0:
            jumps.append(Jump(f"dephasing[{i}]", canonical(np.sqrt(2.0 * gamma) * number_operator(basis, i)), 0))
    return tuple(jumps)


def build_liouvillian(network: ValidatedNetwork, basis: FockBasis) -> Superoperator:
    network = _validated(network)
    if network.n_sites != basis.n_sites:
        raise DimensionMismatch(f"network has {network.n_sites} sites, basis has {basis.n_sites}")
    return Superoperator(
        basis=basis,
        hamiltonian=hamiltonian_matrix(network, basis),
        jumps=build_jumps(network, basis),
        network=network,
        metadata={"engine": "fock", "cutoff": basis.cutoff, "vectorization": "column-stacking"},
    )


# -- time evolution -----------------------------------------------------------


def _differences_present(rho: np.ndarray, basis: FockBasis) -> set[int]:
    rows, cols = np.nonzero(rho)
    total = basis.total_number
    qs = set((total[rows] - total[cols]).tolist())
    qs.add(0)
    return qs


def evolve(
    liouvillian: Superoperator,
    rho0: DensityMatrix | np.ndarray,
    t_final: float,
    tol: float = 1e-8,
    *,
    min_samples: int = MIN_SAMPLES,
    method: str = DEFAULT_METHOD,
) -> Trajectory:
    """Integrate the master equation from ``rho0`` up to ``t_final``.

    Observables (site occupations, trace, E_tr) are sampled on a uniform grid
    of at least ``min_samples`` points, refined until the E_tr quadrature
    error is below ``tol * t_final``.
    """
    rho0 = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0)
    basis = liouvillian.basis
    if rho0.dim != basis.dim:
        raise DimensionMismatch(f"rho0 has dim {rho0.dim}, basis has dim {basis.dim}")
    rho0.check()
    net = liouvillian.network
    det_site = net.detection.site if net is not None else 0
    gamma_det = net.detection.rate_gamma_det if net is not None else 0.0

    gen = liouvillian.graded
    layout = gen.layout(_differences_present(rho0.data, basis))
    y0 = layout.from_dense(rho0.data)
    diag = layout.diagonal_positions
    occ = basis.occupations.astype(float)

    def rhs(_t, y):
        return layout.pack(gen.apply(layout.unpack(y)))

    def observe(ys):
        pops = ys[diag, :].real.T  # (k, dim)
        trace = ys[diag, :].sum(axis=0)
        return np.column_stack([pops @ occ, trace.real, trace.imag])

    def integrand(obs):
        return 2.0 * gamma_det * obs[:, det_site]

    res = integrate_sampled(rhs, y0, t_final, observe, tol=tol, integrand=integrand, min_samples=min_samples, method=method)
    n = basis.n_sites
    trace = res.observables[:, n]
    drift = float(np.max(np.hypot(trace - 1.0, res.observables[:, n + 1])))
    if drift > 10 * tol:
        raise InvariantViolation(f"trace drifted by {drift:.3g} (> 10 x tol)")
    final = DensityMatrix(layout.to_dense(res.y_final, basis.dim))
    meta = dict(liouvillian.metadata)
    meta.update(
        {
            "tol": tol,
            "t_final": float(t_final),
            "integrator": method,
            "nfev": res.nfev,
            "quadrature_error": res.quadrature_error,
        }
    )
    if net is not None:
        meta["network"] = net.to_dict()
    return Trajectory(
        times=res.times,
        occupations=res.observables[:, :n],
        trace=trace,
        detection_site=det_site,
        gamma_det=gamma_det,
        final_state=final,
        metadata=meta,
    )


# -- steady state ---------------------------------------------------------------


def _check_unique(liouvillian: Superoperator) -> None:
    if liouvillian.network is None:
        return
    structures = liouvillian.network.conserved_structures()
    if structures:
        raise DegenerateSteadyState("steady state is not unique: " + "; ".join(structures))


def _finalize(x: np.ndarray, layout: BlockLayout, dim: int) -> DensityMatrix:
    rho = layout.to_dense(x, dim)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real)


def _population_positions(layout: BlockLayout, dim: int) -> np.ndarray:
    """Column-stacked positions of every entry held by ``layout``."""
    pos = np.empty(layout.size, dtype=int)
    for k, (n, m) in enumerate(layout.keys):
        rows, cols = layout.groups[n], layout.groups[m]
        block = rows[:, None] + dim * cols[None, :]
        pos[layout.offsets[k] : layout.offsets[k + 1]] = block.ravel()
    return pos


def _steady_direct(liouvillian: Superoperator, layout: BlockLayout) -> np.ndarray:
    dim = liouvillian.dim
    pos = _population_positions(layout, dim)
    sub = liouvillian.matrix[pos][:, pos].tolil()
    trace_cols = layout.diagonal_positions
    sub[0, :] = 0.0
    sub[0, trace_cols] = 1.0
    system = sub.tocsc()
    rhs = np.zeros(layout.size, dtype=complex)
    rhs[0] = 1.0
    try:
        lu = spla.splu(system)
    except RuntimeError as exc:
        raise DegenerateSteadyState(f"rank-corrected system is singular: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSolve("non-finite steady-state solution")
    for _ in range(3):  # iterative refinement
        r = rhs - system @ x
        if np.linalg.norm(r) <= 1e-14:
            break
        x = x + lu.solve(r)
    return x


def _steady_krylov(liouvillian: Superoperator, layout: BlockLayout, tol: float) -> np.ndarray:
    gen = liouvillian.graded
    anchor = {key: np.zeros(shape, dtype=complex) for key, shape in zip(layout.keys, layout.shapes)}
    anchor[(0, 0)][0, 0] = 1.0  # vacuum projector; any trace-1 anchor works
    diag = layout.diagonal_positions

    def bordered(x):
        # L(x) + Tr(x) * anchor: nonsingular when the steady state is unique,
        # and its solution for right-hand side `anchor` has unit trace.
        blocks = gen.apply(layout.unpack(x))
        blocks[(0, 0)] = blocks[(0, 0)].copy()
        blocks[(0, 0)][0, 0] += x[diag].sum()
        return blocks

    def op(x):
        return layout.pack(gen.solve_no_jump(bordered(x)))

    n = layout.size
    lin = spla.LinearOperator((n, n), matvec=op, dtype=complex)
    b = layout.pack(gen.solve_no_jump(anchor))
    x = np.zeros(n, dtype=complex)
    target = tol * liouvillian.scale
    for attempt in range(4):
        x, info = spla.gmres(lin, b, x0=x, rtol=1e-13, atol=0.0, restart=min(n, 200), maxiter=20)
        resid = np.linalg.norm(layout.pack(gen.apply(layout.unpack(x))))
        log.debug("gmres attempt %d: info=%d residual=%.3g", attempt, info, resid)
        if resid <= 0.5 * target:
            break
    else:
        if not resid <= target:
            raise SingularSolve(f"Krylov steady-state solve stalled at residual {resid:.3g}")
    return x


def steady_state(
    liouvillian: Superoperator,
    *,
    method: str = "auto",
    tol: float = 1e-10,
) -> DensityMatrix:
    """Unique stationary state, normalized to unit trace.

    The solve is restricted to the population blocks ``rho[N, N]``, an
    invariant subspace that contains every density matrix's stationary
    part.  ``method`` is ``"direct"`` (sparse LU of the rank-corrected
    system, trace row replacing the first equation), ``"krylov"`` (GMRES
    on the bordered system, preconditioned by the jump-free Sylvester
    solve) or ``"auto"`` (direct up to ``DIRECT_SOLVE_LIMIT`` unknowns).
    The result satisfies ``||L(rho)||_F <= tol * scale``.
    """
    if not liouvillian.jumps:
        raise InvalidParameter("liouvillian", "purely unitary generator has no unique steady state")
    _check_unique(liouvillian)
    basis = liouvillian.basis
    gen = liouvillian.graded
    layout = gen.layout((0,))
    if not any(j.shift > 0 for j in liouvillian.jumps):
        # No source: vacuum is stationary and, with no conserved structure, unique.
        rho = DensityMatrix.vacuum(basis)
    else:
        if method == "auto":
            method = "direct" if layout.size <= DIRECT_SOLVE_LIMIT else "krylov"
        if method == "direct":
            x = _steady_direct(liouvillian, layout)
        elif method == "krylov":
            x = _steady_krylov(liouvillian, layout, tol)
        else:
            raise InvalidParameter("method", f"unknown steady-state method {method!r}")
        rho = _finalize(x, layout, basis.dim)
    resid = liouvillian.residual(rho)
    if resid > tol * liouvillian.scale:
        raise SingularSolve(f"steady-state residual {resid:.3g} exceeds {tol * liouvillian.scale:.3g}")
    return rho


def transmission(rho_ss: DensityMatrix, network: ValidatedNetwork, basis: FockBasis) -> float:
    """Photon flow into the detector, 2 Gamma_det <n_k>."""
    network = _validated(network)
    k = network.detection.site
    n_k = float(np.real(np.diag(rho_ss.data)) @ basis.occupations[:, k])
    return max(0.0, 2.0 * network.detection.rate_gamma_det * n_k)


def fock_transmission(network, cutoff: int = 3, **kwargs) -> float:
    """Convenience: build, solve and evaluate the transmission in one call."""
    from .fock import build_basis

    network = _validated(network)
    basis = build_basis(network.n_sites, cutoff)
    rho = steady_state(build_liouvillian(network, basis), **kwargs)
    return transmission(rho, network, basis)
