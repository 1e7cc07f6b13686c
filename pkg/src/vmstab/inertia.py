"""Inertia counting, spectral truncation and block congruence.

The inertia (neg, zero, pos) of a symmetric matrix is invariant under
congruence S -> J^T S J with nonsingular J (Sylvester).  The continuation
argument rests on three finite-dimensional tools implemented here:

  * thresholded inertia counts with an explicit margin (how far the nearest
    discarded eigenvalue sits from the zero band),
  * truncation projectors onto the lowest eigenspaces of the lam = 0
    diagonal blocks; cutting inside a degenerate cluster is refused since
    the result would not be a spectral projector,
  * the one-shot block diagonalization of a symmetric 3x3 block matrix by a
    unit lower-triangular congruence, which reduces counting neg(M) to
    counting the three diagonal blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, solve

from .errors import (DegenerateCut, DimensionMismatch, EigFailure,
                     HypothesisFailure, SingularPivot)
from .operators import BlockMatrix


@dataclass(frozen=True)
class InertiaReport:
    neg: int
    zero: int
    pos: int
    eigenvalues: np.ndarray
    zero_tol: float
    margin: float

    @property
    def dim(self) -> int:
        return self.neg + self.zero + self.pos

    def to_dict(self) -> dict:
        return {"neg": self.neg, "zero": self.zero, "pos": self.pos,
                "zero_tol": self.zero_tol, "margin": self.margin,
                "eigenvalues": [float(v) for v in self.eigenvalues]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def symmetric_eigenvalues(s: np.ndarray):
    try:
        return eigh(np.asarray(s, float), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(f"symmetric eigendecomposition failed: {exc}") from exc


def inertia_count(s: np.ndarray, zero_tol: float | None = None) -> InertiaReport:
    """Eigenvalue sign counts with |eig| <= zero_tol treated as zero.

    zero_tol defaults to 1e-8 times the spectral radius.  The margin is the
    smallest |eigenvalue| outside the zero band; counts are stable under
    zero_tol perturbations smaller than margin - zero_tol.
    """
    vals, _ = symmetric_eigenvalues(s)
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    if zero_tol is None:
        zero_tol = 1e-8 * max(scale, 1e-30)
    neg = int(np.sum(vals < -zero_tol))
    pos = int(np.sum(vals > zero_tol))
    zero = vals.size - neg - pos
    outside = np.abs(vals)[np.abs(vals) > zero_tol]
    margin = float(np.min(outside)) if outside.size else np.inf
    return InertiaReport(neg=neg, zero=zero, pos=pos, eigenvalues=vals,
                         zero_tol=float(zero_tol), margin=margin)


# ---------------------------------------------------------------------------
# truncation projectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationPair:
    """Orthonormal eigenbases of the lowest eigenspaces of A1^0 and A2^0.

    p_basis spans the n_p lowest eigenvalues of the phi-block, q_basis the
    n_q lowest of the psi-block (ascending, counting multiplicity).
    """

    p_basis: np.ndarray
    q_basis: np.ndarray
    n_p: int
    n_q: int
    p_eigenvalues: np.ndarray
    q_eigenvalues: np.ndarray


def resolve_rank(eigenvalues: np.ndarray, n: int, gap_tol: float) -> int:
    """Smallest rank >= n whose cut does not split a degenerate cluster."""
    dim = eigenvalues.size
    if not 1 <= n <= dim:
        raise DimensionMismatch(f"rank {n} outside 1..{dim}")
    scale = max(float(np.max(np.abs(eigenvalues))), 1e-30)
    m = n
    while m < dim and eigenvalues[m] - eigenvalues[m - 1] <= gap_tol * scale:
        m += 1
    return m


def truncation_projectors(a1_0: np.ndarray, a2_0: np.ndarray, n: int,
                          gap_tol: float = 1e-9,
                          n_q: int | None = None) -> TruncationPair:
    """Eigenprojectors onto the n lowest eigenvalues of each diagonal block.

    Raises DegenerateCut when the requested rank falls inside a degenerate
    cluster of either block (the cut would be basis-dependent); use
    resolve_rank to bump the rank past the cluster first.
    """
    n_q = n if n_q is None else n_q
    pairs = []
    for mat, rank, label in ((a1_0, n, "A1"), (a2_0, n_q, "A2")):
        vals, vecs = symmetric_eigenvalues(mat)
        dim = vals.size
        if not 1 <= rank <= dim:
            raise DimensionMismatch(f"{label}: rank {rank} outside 1..{dim}")
        scale = max(float(np.max(np.abs(vals))), 1e-30)
        if rank < dim and vals[rank] - vals[rank - 1] <= gap_tol * scale:
            raise DegenerateCut(
                f"{label}: eigenvalues {rank} and {rank + 1} are degenerate "
                f"(gap {vals[rank] - vals[rank - 1]:.3e}); adjust n upward")
        pairs.append((vecs[:, :rank], vals[:rank]))
    return TruncationPair(p_basis=pairs[0][0], q_basis=pairs[1][0],
                          n_p=n, n_q=n_q,
                          p_eigenvalues=pairs[0][1], q_eigenvalues=pairs[1][1])


def truncate_m(block: BlockMatrix, pair: TruncationPair) -> np.ndarray:
    """Compress the block matrix onto span(P_n) x span(Q_n) x R.

    Blocks become P^T (.) P, P^T (.) Q etc.; the scalar corner is kept.
    Returns a dense symmetric matrix of size n_p + n_q + 1.
    """
    p, q = pair.p_basis, pair.q_basis
    if p.shape[0] != block.dim_phi or q.shape[0] != block.dim_psi:
        raise DimensionMismatch(
            f"projector rows ({p.shape[0]}, {q.shape[0]}) do not match blocks "
            f"({block.dim_phi}, {block.dim_psi})")
    n_p, n_q = pair.n_p, pair.n_q
    out = np.zeros((n_p + n_q + 1, n_p + n_q + 1))
    m = block.matrix
    phi, psi, bi = block.phi_slice, block.psi_slice, block.b_index
    out[:n_p, :n_p] = p.T @ m[phi, phi] @ p
    out[:n_p, n_p:n_p + n_q] = p.T @ m[phi, psi] @ q
    out[n_p:n_p + n_q, :n_p] = out[:n_p, n_p:n_p + n_q].T
    out[n_p:n_p + n_q, n_p:n_p + n_q] = q.T @ m[psi, psi] @ q
    out[:n_p, -1] = p.T @ m[phi, bi]
    out[-1, :n_p] = out[:n_p, -1]
    out[n_p:n_p + n_q, -1] = q.T @ m[psi, bi]
    out[-1, n_p:n_p + n_q] = out[n_p:n_p + n_q, -1]
    out[-1, -1] = m[bi, bi]
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# block congruence diagonalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockDiagonalization:
    j1: np.ndarray
    j2: np.ndarray
    j3: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    delta3: np.ndarray
    offdiag_residual: float

    def deltas(self):
        return self.delta1, self.delta2, self.delta3


def _solve_checked(a: np.ndarray, rhs: np.ndarray, cond_tol: float, label: str):
    vals = np.linalg.eigvalsh(a)
    small = float(np.min(np.abs(vals)))
    big = float(np.max(np.abs(vals)))
    if small == 0.0 or big / small > cond_tol:
        raise SingularPivot(
            f"{label} pivot condition {big / max(small, 1e-300):.3e} exceeds "
            f"{cond_tol:.1e}")
    return solve(a, rhs, assume_a="sym", check_finite=False)


def block_diagonalize(a1, a2, a3, b, c, d, cond_tol: float = 1e12,
                      alg_tol: float = 1e-9) -> BlockDiagonalization:
    """Congruence-diagonalize [[A1,B,C],[B^T,A2,D],[C^T,D^T,A3]].

    A unit lower-triangular J = [[I,0,0],[J1,I,0],[J2,J3,I]] gives
    J^T M J = diag(D1, D2, D3) with

        J3 = -A3^{-1} D^T
        J1 = (A2 - D A3^{-1} D^T)^{-1} (-B^T + D A3^{-1} C^T)
        J2 = -A3^{-1} (C^T + D^T J1)
        D1 = A1 - (B - C A3^{-1} D^T) S^{-1} (B^T - D A3^{-1} C^T) - C A3^{-1} C^T
        D2 = S = A2 - D A3^{-1} D^T
        D3 = A3

    J is nonsingular, so the inertia of M equals that of diag(D1, D2, D3).
    Scalar blocks may be passed as 1x1 arrays or floats.
    """
    a1, a2, a3 = (np.atleast_2d(np.asarray(x, float)) for x in (a1, a2, a3))
    b, c, d = (np.atleast_2d(np.asarray(x, float)) for x in (b, c, d))
    n1, n2, n3 = a1.shape[0], a2.shape[0], a3.shape[0]
    if (b.shape != (n1, n2)) or (c.shape != (n1, n3)) or (d.shape != (n2, n3)):
        raise DimensionMismatch(
            f"block shapes B{b.shape} C{c.shape} D{d.shape} inconsistent with "
            f"diagonals {n1},{n2},{n3}")

    a3_inv_dt = _solve_checked(a3, d.T, cond_tol, "A3")
    a3_inv_ct = _solve_checked(a3, c.T, cond_tol, "A3")
    schur = a2 - d @ a3_inv_dt
    j1 = _solve_checked(schur, -b.T + d @ a3_inv_ct, cond_tol, "A2 - D A3^-1 D^T")
    j3 = -a3_inv_dt
    j2 = -a3_inv_ct - a3_inv_dt @ j1

    g = b - c @ a3_inv_dt.T
    delta1 = a1 + g @ j1 - c @ a3_inv_ct.T
    delta1 = 0.5 * (delta1 + delta1.T)
    delta2 = 0.5 * (schur + schur.T)
    delta3 = a3

    dim = n1 + n2 + n3
    m = np.zeros((dim, dim))
    m[:n1, :n1] = a1
    m[:n1, n1:n1 + n2] = b
    m[n1:n1 + n2, :n1] = b.T
    m[:n1, n1 + n2:] = c
    m[n1 + n2:, :n1] = c.T
    m[n1:n1 + n2, n1:n1 + n2] = a2
    m[n1:n1 + n2, n1 + n2:] = d
    m[n1 + n2:, n1:n1 + n2] = d.T
    m[n1 + n2:, n1 + n2:] = a3
    j = np.eye(dim)
    j[n1:n1 + n2, :n1] = j1
    j[n1 + n2:, :n1] = j2
    j[n1 + n2:, n1:n1 + n2] = j3
    full = j.T @ m @ j
    resid = full.copy()
    resid[:n1, :n1] -= delta1
    resid[n1:n1 + n2, n1:n1 + n2] -= delta2
    resid[n1 + n2:, n1 + n2:] -= delta3
    offdiag = float(np.max(np.abs(resid))) / max(float(np.max(np.abs(m))), 1e-30)
    if offdiag > alg_tol:
        raise SingularPivot(
            f"congruence residual {offdiag:.3e} exceeds alg_tol {alg_tol:.1e}")
    return BlockDiagonalization(j1=j1, j2=j2, j3=j3, delta1=delta1,
                                delta2=delta2, delta3=delta3,
                                offdiag_residual=offdiag)


def k1_operator(a1_0: np.ndarray, a2_0: np.ndarray, b0: np.ndarray,
                singular_tol: float = 1e-10) -> np.ndarray:
    """K1^0 = A2^0 + B0^T (A1^0)^{-1} B0 on the mean-zero electric block.

    Per-column symmetric-indefinite solves, never an explicit inverse.
    Raises HypothesisFailure when A1^0 is numerically singular on the
    mean-zero space (its kernel would exceed the constants).
    """
    vals = np.linalg.eigvalsh(a1_0)
    scale = max(float(np.max(np.abs(vals))), 1e-30)
    if float(np.min(np.abs(vals))) <= singular_tol * scale:
        raise HypothesisFailure(
            f"A1^0 numerically singular on the mean-zero space "
            f"(min |eig| = {np.min(np.abs(vals)):.3e})")
    sol = solve(a1_0, b0, assume_a="sym", check_finite=False)
    k = a2_0 + b0.T @ sol
    return 0.5 * (k + k.T)
