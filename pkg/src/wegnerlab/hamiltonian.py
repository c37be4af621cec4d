"""Finite-difference Schrödinger operators ``-Δ_h + V`` on the box lattice and eigenvalue counting.

The stencil is the standard ``2d+1``-point Laplacian.  Dirichlet keeps the
diagonal ``2d/h^2`` at boundary nodes; Neumann (mirror ghost nodes) removes
``1/h^2`` per missing neighbour.  Hence ``H_D - H_N`` is diagonal and
nonnegative.

Counting never diagonalizes: in 1-D the Sturm recurrence for the pivots of
``H - E`` is run, in 2-D the block tridiagonal structure is factorized block
by block and the inertia of each Schur complement is read off a
Bunch-Kaufman ``LDL^T`` factorization.  Sylvester's law of inertia makes the
number of negative pivots the number of eigenvalues below ``E``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .field_sampler import DIRICHLET, NEUMANN, BOUNDARY_CONDITIONS, FieldRealization, LatticeSpec

DENSE_LIMIT = 4096
# pivots within a few rounding units of their inputs count as exact ties
_PIVOT_EPS = 8 * np.finfo(float).eps


class DenseLimitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Symmetric ``-Δ_h + V`` stored as its diagonal plus the uniform hopping ``-1/h^2``."""

    lattice: LatticeSpec
    bc: str
    diagonal: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.lattice.d

    @property
    def n(self) -> int:
        return self.lattice.n_per_axis

    @property
    def dimension(self) -> int:
        return self.diagonal.size

    @property
    def hopping(self) -> float:
        return -1.0 / self.lattice.h ** 2

    def offdiagonal_1d(self) -> np.ndarray:
        return np.full(self.n - 1, self.hopping)

    def to_sparse(self):
        n = self.n
        t = self.hopping
        if self.d == 1:
            off = np.full(n - 1, t)
            return sparse.diags([off, self.diagonal.ravel(), off], [-1, 0, 1], format="csr")
        off1 = sparse.diags([np.full(n - 1, t), np.full(n - 1, t)], [-1, 1])
        eye = sparse.identity(n)
        hop = sparse.kron(off1, eye) + sparse.kron(eye, off1)
        return (hop + sparse.diags(self.diagonal.ravel())).tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def gershgorin(self) -> tuple:
        """Interval containing the spectrum."""
        diag = self.diagonal
        radius = np.zeros_like(diag)
        for axis in range(self.d):
            nb = np.full(diag.shape, 2.0)
            idx = [slice(None)] * self.d
            idx[axis] = 0
            nb[tuple(idx)] -= 1
            idx[axis] = -1
            nb[tuple(idx)] -= 1
            radius += nb / self.lattice.h ** 2
        return float(np.min(diag - radius)), float(np.max(diag + radius))


def laplacian_diagonal(lattice: LatticeSpec, bc: str) -> np.ndarray:
    """Diagonal of ``-Δ_h`` for the chosen boundary condition."""
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}")
    h2 = lattice.h ** 2
    diag = np.full(lattice.shape, 2.0 * lattice.d / h2)
    if bc == NEUMANN:
        for axis in range(lattice.d):
            idx = [slice(None)] * lattice.d
            idx[axis] = 0
            diag[tuple(idx)] -= 1.0 / h2
            idx[axis] = -1
            diag[tuple(idx)] -= 1.0 / h2
    return diag


def assemble(lattice: LatticeSpec, field_: FieldRealization, bc: Optional[str] = None) -> HamiltonianMatrix:
    bc = bc or lattice.boundary_condition
    if not field_.lattice.same_grid(lattice):
        raise ValueError("field lattice does not match the Hamiltonian lattice")
    diag = laplacian_diagonal(lattice, bc) + field_.values
    diag.setflags(write=False)
    return HamiltonianMatrix(lattice.with_bc(bc), bc, diag)


def assemble_from_values(lattice: LatticeSpec, values, bc: Optional[str] = None) -> HamiltonianMatrix:
    values = np.asarray(values, dtype=float).reshape(lattice.shape)
    return assemble(lattice, FieldRealization(lattice, values, 0), bc)


def shift_for(E: float) -> float:
    return 1e-12 * (1.0 + abs(E))


# ---------------------------------------------------------------------------
# 1-D: Sturm sequences


def sturm_counts(diagonals, offdiag_sq: float, energies):
    """Negative-pivot counts of ``T - E`` for a batch of tridiagonal matrices.

    ``diagonals`` has shape ``(..., n)`` (any leading batch shape), all with
    the same squared off-diagonal ``offdiag_sq``; ``energies`` is 1-D.
    Returns integer counts of shape ``(..., len(energies))`` and a boolean
    array marking evaluations that hit a pivot within rounding of zero.
    """
    diagonals = np.asarray(diagonals, dtype=float)
    E = np.asarray(energies, dtype=float)
    a = diagonals[..., 0, None] - E
    q = a
    count = (q < 0).astype(np.int64)
    zero = np.abs(q) <= _PIVOT_EPS * np.abs(a)
    for i in range(1, diagonals.shape[-1]):
        a = diagonals[..., i, None] - E
        with np.errstate(divide="ignore", invalid="ignore"):
            t = offdiag_sq / q
        q = a - t
        count += q < 0
        zero |= np.abs(q) <= _PIVOT_EPS * (np.abs(a) + np.abs(t))
    return count, zero


def _count_1d(H: HamiltonianMatrix, energies):
    e2 = H.hopping ** 2
    counts, zero = sturm_counts(H.diagonal, e2, energies)
    shifts = np.zeros(len(energies))
    if np.any(zero):
        bad = np.nonzero(zero)[0]
        for j in bad:
            E = energies[j]
            s = shift_for(E)
            while True:
                c, z = sturm_counts(H.diagonal, e2, [E + s])
                if not z[0]:
                    break
                s *= 2
            counts[j] = c[0]
            shifts[j] = s
    return counts, shifts


# ---------------------------------------------------------------------------
# 2-D: block LDL^T inertia


def _ldl_inertia(S: np.ndarray):
    """``(negatives, zeros)`` of a symmetric matrix from its Bunch-Kaufman factorization."""
    _, D, _ = sla.ldl(S, lower=True, hermitian=True)
    tol = _PIVOT_EPS * S.shape[0] * float(np.max(np.abs(S)))
    neg = zero = 0
    k = 0
    m = D.shape[0]
    while k < m:
        if k + 1 < m and D[k + 1, k] != 0.0:
            ev = np.linalg.eigvalsh(D[k:k + 2, k:k + 2])
            neg += int(np.sum(ev < 0))
            zero += int(np.sum(np.abs(ev) <= tol))
            k += 2
        else:
            neg += int(D[k, k] < 0)
            zero += int(abs(D[k, k]) <= tol)
            k += 1
    return neg, zero


def block_inertia_count(H: HamiltonianMatrix, E: float):
    """Negative pivots of ``H - E`` via Schur complements of the block tridiagonal form.

    Rows of the 2-D lattice form the blocks: ``S_0 = D_0``,
    ``S_i = D_i - h^-4 S_{i-1}^{-1}``.  Returns ``(count, breakdown)``.
    """
    n = H.n
    t = H.hopping
    T = np.diag(np.full(n - 1, t), -1) + np.diag(np.full(n - 1, t), 1)
    total = 0
    S_inv = None
    for i in range(n):
        S = T + np.diag(H.diagonal[i] - E)
        if S_inv is not None:
            S = S - (t * t) * S_inv
        S = 0.5 * (S + S.T)
        neg, zero = _ldl_inertia(S)
        if zero:
            return total, True
        total += neg
        if i < n - 1:
            S_inv = sla.solve(S, np.eye(n), assume_a="sym")
    return total, False


def _count_2d(H: HamiltonianMatrix, energies):
    counts = np.empty(len(energies), dtype=np.int64)
    shifts = np.zeros(len(energies))
    for j, E in enumerate(energies):
        s = 0.0
        while True:
            c, broke = block_inertia_count(H, E + s)
            if not broke:
                break
            s = shift_for(E) if s == 0 else 2 * s
        counts[j] = c
        shifts[j] = s
    return counts, shifts


def count_below(H: HamiltonianMatrix, E, return_shift: bool = False):
    """Number of eigenvalues ``<= E`` (exact integer), scalar or per energy.

    On a pivot within rounding of zero the count is retaken at ``E + shift`` with
    ``shift = 1e-12 (1 + |E|)`` (doubled until the factorization succeeds);
    ``return_shift=True`` also returns the applied shifts.
    """
    scalar = np.ndim(E) == 0
    energies = np.atleast_1d(np.asarray(E, dtype=float))
    if not np.all(np.isfinite(energies)):
        raise ValueError("energies must be finite")
    counts, shifts = (_count_1d if H.d == 1 else _count_2d)(H, energies)
    if scalar:
        counts, shifts = int(counts[0]), float(shifts[0])
    return (counts, shifts) if return_shift else counts


def eigenvalues(H: HamiltonianMatrix, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """All eigenvalues, ascending, from a dense symmetric eigensolver."""
    if H.dimension > dense_limit:
        raise DenseLimitError(
            f"dimension {H.dimension} exceeds the dense limit {dense_limit}; use count_below")
    if H.dimension == 1:
        return H.diagonal.ravel().copy()
    return np.linalg.eigvalsh(H.to_dense())


def free_dirichlet_eigenvalues_1d(n: int, h: float) -> np.ndarray:
    """``(2/h^2)(1 - cos(k pi/(n+1)))``, ``k = 1..n``."""
    k = np.arange(1, n + 1)
    return (2.0 / h ** 2) * (1.0 - np.cos(k * math.pi / (n + 1)))


def free_neumann_eigenvalues_1d(n: int, h: float) -> np.ndarray:
    """Mirror-Neumann chain: ``(2/h^2)(1 - cos(k pi/n))``, ``k = 0..n-1``."""
    k = np.arange(n)
    return (2.0 / h ** 2) * (1.0 - np.cos(k * math.pi / n))
