"""Truncated multi-mode Fock space and sparse operators on it.

Product states are enumerated with site 0 varying slowest, so index
``s`` of basis state ``(n_0, ..., n_{N-1})`` is the mixed-radix number
with digit ``n_0`` most significant.  Operators are ``scipy.sparse``
CSR matrices kept in canonical form (sorted indices, no duplicates).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, IndexOutOfRange, InvalidParameter, Overflow
from .network import NetworkSpec, ValidatedNetwork, validate_network

#: Default cap on the Liouville-space dimension (dim**2).
DEFAULT_MAX_DIM = 2**20
MAX_DIM_ENV = "NAT_SIM_MAX_DIM"

SparseOperator = sp.csr_matrix


def max_liouville_dim() -> int:
    raw = os.environ.get(MAX_DIM_ENV)
    if raw is None:
        return DEFAULT_MAX_DIM
    try:
        return int(raw)
    except ValueError:
        raise InvalidParameter(MAX_DIM_ENV, f"{MAX_DIM_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class FockBasis:
    n_sites: int
    cutoff: int

    @property
    def levels(self) -> int:
        return self.cutoff + 1

    @property
    def dim(self) -> int:
        return self.levels**self.n_sites

    @cached_property
    def occupations(self) -> np.ndarray:
        """``(dim, n_sites)`` integer array of photon numbers per basis state."""
        grids = np.indices((self.levels,) * self.n_sites).reshape(self.n_sites, -1)
        return grids.T.copy()

    @cached_property
    def total_number(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def index(self, occupation) -> int:
        occ = tuple(int(n) for n in occupation)
        if len(occ) != self.n_sites or any(not 0 <= n <= self.cutoff for n in occ):
            raise IndexOutOfRange(occupation)
        return int(np.ravel_multi_index(occ, (self.levels,) * self.n_sites))


def build_basis(n_sites: int, cutoff: int = 3, max_dim: int | None = None) -> FockBasis:
    """Uniform-cutoff product basis with levels ``0..cutoff`` on every site.

    ``max_dim`` caps the Liouville-space dimension ``dim**2`` (default
    ``2**20`` or ``$NAT_SIM_MAX_DIM``); beyond it a full density-matrix run
    is not attempted and :class:`Overflow` is raised.
    """
    if n_sites < 1:
        raise InvalidParameter("n_sites", "n_sites must be >= 1")
    if cutoff < 1:
        raise InvalidParameter("cutoff", "cutoff must be >= 1")
    cap = max_liouville_dim() if max_dim is None else max_dim
    dim = (cutoff + 1) ** n_sites
    if dim * dim > cap:
        raise Overflow(
            f"{n_sites} sites at cutoff {cutoff}: dim {dim}, Liouville dimension {dim * dim} "
            f"exceeds cap {cap}; use the moment engine for large networks"
        )
    return FockBasis(n_sites, cutoff)


def canonical(op) -> SparseOperator:
    """CSR copy with duplicates summed, explicit zeros dropped and indices sorted."""
    out = sp.csr_matrix(op, dtype=complex, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _single_mode_annihilator(cutoff: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1, format="csr")


def _embed(basis: FockBasis, site: int, local) -> SparseOperator:
    ident = sp.identity(basis.levels, format="csr")
    out = sp.identity(1, format="csr")
    for s in range(basis.n_sites):
        out = sp.kron(out, local if s == site else ident, format="csr")
    return canonical(out)


def site_annihilator(basis: FockBasis, site: int) -> SparseOperator:
    """Lowering operator of ``site``; its conjugate transpose is the raising operator."""
    if not 0 <= site < basis.n_sites:
        raise IndexOutOfRange(site)
    return _embed(basis, site, _single_mode_annihilator(basis.cutoff))


def number_operator(basis: FockBasis, site: int) -> SparseOperator:
    if not 0 <= site < basis.n_sites:
        raise IndexOutOfRange(site)
    return canonical(sp.diags(basis.occupations[:, site].astype(complex), format="csr"))


def total_number_operator(basis: FockBasis) -> SparseOperator:
    return canonical(sp.diags(basis.total_number.astype(complex), format="csr"))


def _as_network(network) -> ValidatedNetwork:
    return validate_network(network) if isinstance(network, NetworkSpec) else network


def hamiltonian_matrix(network: ValidatedNetwork, basis: FockBasis) -> SparseOperator:
    """sum_i omega_i n_i + sum_edges g_ij (a_i^dag a_j + a_i a_j^dag)."""
    network = _as_network(network)
    if network.n_sites != basis.n_sites:
        raise DimensionMismatch(f"network has {network.n_sites} sites, basis has {basis.n_sites}")
    ham = sp.diags(basis.occupations @ np.asarray(network.omega, dtype=float), format="csr").astype(complex)
    lowering = [site_annihilator(basis, s) for s in range(basis.n_sites)]
    for i, j, g in network.edges:
        hop = lowering[i].conj().T @ lowering[j]
        ham = ham + g * (hop + hop.conj().T)
    return canonical(ham)


def dump_operator(op, path: str | Path) -> None:
    """Write ``row col re im`` lines, row-major sorted, 17 significant digits."""
    coo = canonical(op).tocoo()
    lines = [f"# dim {op.shape[0]}"]
    lines += [
        f"{r} {c} {v.real:.17g} {v.imag:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_operator(path: str | Path) -> SparseOperator:
    text = Path(path).read_text().splitlines()
    dim = int(text[0].split()[-1])
    rows, cols, vals = [], [], []
    for line in text[1:]:
        if not line.strip():
            continue
        r, c, re, im = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(float(re), float(im)))
    return canonical(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)))
