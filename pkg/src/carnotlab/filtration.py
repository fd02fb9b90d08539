"""Pointwise invariant N(p) and the search for its finite supremum N_0.

For ``p = xi + u`` the first-layer flag ``U^l(p)`` is the span of
``xi, J_u xi, ..., J_u^{l-1} xi`` and ``U_l(p)`` is the set of second-layer
``v`` with ``J_v`` vanishing on ``U^l(p)``.  The orthogonal differences
``W_l = U_l minus U_{l+1}`` give

    N(p) = 2Q - n + 2 * sum_l l * dim W_l(p)

whenever the stable part ``W_inf(p)`` is trivial, and infinity otherwise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .algebra import TAU_RANK, GroupPoint, StructureConstants
from .errors import DomainError
from .jmaps import j_basis, j_matrix

INF = math.inf


@dataclass
class FiltrationReport:
    p: GroupPoint
    dims_W: list[int]
    dim_W_inf: int
    N_of_p: Union[int, float]
    dims_U_upper: list[int] = field(default_factory=list)
    dims_U_lower: list[int] = field(default_factory=list)
    smallest_accepted: float = INF
    largest_rejected: float = 0.0

    @property
    def finite(self) -> bool:
        return self.dim_W_inf == 0


@dataclass
class N0SearchResult:
    best_value: int
    argmax: GroupPoint
    samples_evaluated: int
    seed: int
    budget: int
    candidate_set: str
    exact: bool = False


class _Margins:
    """Tracks the tightest accepted and rejected relative singular values."""

    def __init__(self):
        self.accepted = INF
        self.rejected = 0.0

    def accept(self, value: float) -> None:
        self.accepted = min(self.accepted, value)

    def reject(self, value: float) -> None:
        self.rejected = max(self.rejected, value)


def _krylov_basis(J: np.ndarray, xi: np.ndarray, ell: int, margins: _Margins | None = None):
    """Orthonormal basis (columns) of ``span{xi, J xi, ..., J^{ell-1} xi}``.

    Arnoldi-style: the next direction is ``J`` applied to the newest basis
    vector, orthogonalised twice.  A direction is kept when its remainder
    exceeds ``TAU_RANK`` relative to the scale of the map that produced it.
    """
    m = xi.shape[0]
    basis = np.zeros((m, 0))
    if ell <= 0:
        return basis
    norm_xi = np.linalg.norm(xi)
    if norm_xi == 0.0:
        return basis
    basis = (xi / norm_xi)[:, None]
    scale = np.linalg.norm(J, 2)
    for _ in range(1, ell):
        if scale == 0.0:
            break
        w = J @ basis[:, -1]
        for _ in range(2):
            w = w - basis @ (basis.T @ w)
        rel = np.linalg.norm(w) / scale
        if rel > TAU_RANK:
            if margins is not None:
                margins.accept(rel)
            basis = np.column_stack([basis, w / np.linalg.norm(w)])
        else:
            if margins is not None:
                margins.reject(rel)
            # Krylov spaces stop growing once one step fails.
            break
        if basis.shape[1] == m:
            break
    return basis


def _kernel_basis(mat: np.ndarray, d2: int, margins: _Margins | None = None) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical kernel of ``mat``."""
    if mat.shape[0] == 0:
        return np.eye(d2)
    _, sv, vt = np.linalg.svd(mat, full_matrices=True)
    if sv.size == 0 or sv[0] == 0.0:
        return np.eye(d2)
    rel = sv / sv[0]
    rank = int(np.sum(rel > TAU_RANK))
    if margins is not None:
        if rank:
            margins.accept(float(rel[rank - 1]))
        if rank < sv.size:
            margins.reject(float(rel[rank]))
    return vt[rank:].T.copy()


def _annihilator_from_basis(jb: np.ndarray, B: np.ndarray, margins=None) -> np.ndarray:
    d2, m, _ = jb.shape
    r = B.shape[1]
    if r == 0:
        return np.eye(d2)
    # column l stacks J_{Y_l} b_1, ..., J_{Y_l} b_r
    stacked = np.einsum("lij,jr->ril", jb, B).reshape(r * m, d2)
    return _kernel_basis(stacked, d2, margins)


def flag_subspace(sc: StructureConstants, p: GroupPoint, ell: int) -> np.ndarray:
    """Orthonormal basis of ``U^ell(p)`` as an ``(m, r)`` array."""
    if ell < 0:
        raise DomainError(f"ell must be >= 0, got {ell}")
    return _krylov_basis(j_matrix(sc, p.u), p.xi, ell)


def annihilator(sc: StructureConstants, p: GroupPoint, ell: int) -> np.ndarray:
    """Orthonormal basis of ``U_ell(p)`` as a ``(d2, r)`` array."""
    B = flag_subspace(sc, p, ell)
    return _annihilator_from_basis(j_basis(sc), B)


def w_decomposition(sc: StructureConstants, p: GroupPoint, jb: np.ndarray | None = None) -> FiltrationReport:
    if jb is None:
        jb = j_basis(sc)
    margins = _Margins()
    J = np.tensordot(p.u, jb, axes=1)
    full = _krylov_basis(J, p.xi, sc.m + 1, margins)
    L = full.shape[1]
    # U^l is spanned by the first l Arnoldi vectors, l = 0..L
    lower_dims = []
    for ell in range(L + 1):
        lower_dims.append(_annihilator_from_basis(jb, full[:, :ell], margins).shape[1])
    dims_W = [lower_dims[ell] - lower_dims[ell + 1] for ell in range(L)]
    dim_inf = lower_dims[L]
    n, Q = sc.n, sc.Q
    if dim_inf == 0:
        N = 2 * Q - n + 2 * sum(ell * w for ell, w in enumerate(dims_W))
    else:
        N = INF
    return FiltrationReport(
        p=p,
        dims_W=dims_W,
        dim_W_inf=dim_inf,
        N_of_p=N,
        dims_U_upper=list(range(L + 1)),
        dims_U_lower=lower_dims,
        smallest_accepted=margins.accepted,
        largest_rejected=margins.rejected,
    )


def n_of_p(sc: StructureConstants, p: GroupPoint) -> Union[int, float]:
    return w_decomposition(sc, p).N_of_p


def _unit(k: int, size: int) -> np.ndarray:
    e = np.zeros(size)
    e[k] = 1.0
    return e


def _sparse_vectors(size: int) -> list[np.ndarray]:
    vecs = [_unit(i, size) for i in range(size)]
    for i, j in itertools.combinations(range(size), 2):
        for sign in (1.0, -1.0):
            vecs.append(_unit(i, size) + sign * _unit(j, size))
    return vecs


def n0_candidates(sc: StructureConstants, budget: int, seed: int) -> Iterator[GroupPoint]:
    """Structured sparse points followed by ``budget`` seeded normal points."""
    m, d2 = sc.m, sc.d2
    for i in range(m):
        for j in range(d2):
            yield GroupPoint(_unit(i, m), _unit(j, d2))
    for xi in _sparse_vectors(m):
        for u in _sparse_vectors(d2):
            yield GroupPoint(xi, u)
    rng = np.random.default_rng(seed)
    for _ in range(budget):
        yield GroupPoint(rng.standard_normal(m), rng.standard_normal(d2))


def n0_search(sc: StructureConstants, budget: int = 2000, seed: int = 0, metivier: bool = False) -> N0SearchResult:
    """Largest finite ``N(p)`` over the candidate set; a lower bound for N_0.

    Ties keep the earliest candidate.  Pass ``metivier=True`` when the group
    is known to be Métivier, in which case the value ``2Q - n`` is exact.
    """
    if budget <= 0:
        raise DomainError(f"budget must be positive, got {budget}")
    jb = j_basis(sc)
    best, arg, count = -1, None, 0
    for p in n0_candidates(sc, budget, seed):
        count += 1
        value = w_decomposition(sc, p, jb).N_of_p
        if value != INF and value > best:
            best, arg = int(value), p
    if arg is None:
        raise DomainError("no candidate point had finite N(p)")
    n_struct = count - budget
    desc = (
        f"{sc.m * sc.d2} basis points X_i + Y_j, "
        f"{n_struct - sc.m * sc.d2} sparse points (X_i +/- X_j) + (Y_a +/- Y_b), "
        f"{budget} standard-normal points (seed {seed})"
    )
    return N0SearchResult(best, arg, count, seed, budget, desc, exact=metivier)
