"""Skew operators ``J_u`` and the Métivier (ideal) test.

``J_u`` is the first-layer operator with ``<u, [v, w]> = <J_u v, w>``.
Its matrix in the basis ``X_1..X_m`` has entry ``(j, i)`` equal to
``sum_l u_l c[i, j, l]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algebra import StructureConstants
from .errors import DomainError, SpecError

METIVIER_LOWER = 1e-6
SINGULAR_UPPER = 1e-12


@dataclass(frozen=True)
class JOperator:
    u: np.ndarray
    mat: np.ndarray


def j_basis(sc: StructureConstants) -> np.ndarray:
    """Stack ``(J_{Y_1}, ..., J_{Y_d2})`` with shape ``(d2, m, m)``."""
    return np.ascontiguousarray(sc.c.transpose(2, 1, 0))


def j_matrix(sc: StructureConstants, u: np.ndarray) -> np.ndarray:
    """``J_u`` for one ``u`` of shape ``(d2,)`` or a batch ``(..., d2)``."""
    return np.einsum("ijl,...l->...ji", sc.c, u)


def j_operator(sc: StructureConstants, u) -> JOperator:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (sc.d2,):
        raise SpecError(f"u must have length d2={sc.d2}, got {u.size}")
    mat = j_matrix(sc, u)
    # einsum over an antisymmetric tensor is exactly skew already; this
    # removes any doubt about summation order.
    mat = 0.5 * (mat - mat.T)
    return JOperator(u.copy(), mat)


def sigma_min(mat: np.ndarray) -> float:
    return float(np.linalg.svd(mat, compute_uv=False)[-1])


class MetivierStatus(str, enum.Enum):
    METIVIER = "Metivier"
    NOT_METIVIER = "NotMetivier"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class MetivierVerdict:
    status: MetivierStatus
    witness: Optional[np.ndarray]
    certificate: str
    min_sigma: float
    budget: int
    seed: int
    start_minima: list[float] = field(default_factory=list)

    @property
    def is_metivier(self) -> bool:
        return self.status is MetivierStatus.METIVIER


def _bottom_pair_descent(jb: np.ndarray, u: np.ndarray, max_iter: int = 400):
    """Minimise the sum of the two smallest eigenvalues of ``J_u^T J_u``.

    Alternates between the bottom eigenvectors ``e_1, e_2`` of ``J_u^T J_u``
    (exact minimiser for fixed ``u``) and the bottom eigenvector of the
    quadratic form ``u -> sum_k |J_u e_k|^2`` on the sphere (exact
    minimiser for fixed ``e``).  Each half-step can only decrease the
    objective.  Returns ``(u, sigma_min, converged)``.
    """
    m = jb.shape[1]
    width = min(2, m)
    prev = np.inf
    converged = False
    for _ in range(max_iter):
        J = np.tensordot(u, jb, axes=1)
        evals, evecs = np.linalg.eigh(J.T @ J)
        f = float(np.sum(np.clip(evals[:width], 0.0, None)))
        if f <= 1e-26 or prev - f <= 1e-13 * max(prev, 1e-300):
            converged = True
            break
        prev = f
        E = evecs[:, :width]
        # M[k, :, l] = J_{Y_l} e_k
        M = np.einsum("lij,jk->kil", jb, E)
        A = np.einsum("kil,kir->lr", M, M)
        _, avecs = np.linalg.eigh(A)
        u_new = avecs[:, 0]
        if np.dot(u_new, u) < 0:
            u_new = -u_new
        u = u_new
    J = np.tensordot(u, jb, axes=1)
    return u, sigma_min(J), converged


def metivier_check(sc: StructureConstants, budget: int = 64, seed: int = 0) -> MetivierVerdict:
    """Search the unit sphere of the second layer for a singular ``J_u``.

    Starts are uniform on the sphere, start ``k`` drawing from the stream
    ``(seed, k)``.  The verdict is a record of search effort, not a proof.
    """
    if budget <= 0:
        raise DomainError(f"budget must be positive, got {budget}")
    jb = j_basis(sc)
    if sc.m % 2 == 1:
        witness = np.zeros(sc.d2)
        witness[0] = 1.0
        smin = sigma_min(np.tensordot(witness, jb, axes=1))
        return MetivierVerdict(
            MetivierStatus.NOT_METIVIER,
            witness,
            f"odd first-layer dimension m={sc.m}: every skew J_u is singular",
            smin,
            budget,
            seed,
        )
    minima: list[float] = []
    best_sigma, best_u = np.inf, None
    all_converged = True
    for k in range(budget):
        rng = np.random.default_rng([seed, k])
        u = rng.standard_normal(sc.d2)
        u /= np.linalg.norm(u)
        u, smin, converged = _bottom_pair_descent(jb, u)
        all_converged &= converged
        minima.append(smin)
        if smin < best_sigma:
            best_sigma, best_u = smin, u
        if smin <= SINGULAR_UPPER:
            break
    starts = len(minima)
    if best_sigma <= SINGULAR_UPPER:
        status = MetivierStatus.NOT_METIVIER
        cert = (
            f"alternating bottom-pair descent, start {starts - 1} of budget {budget} "
            f"found sigma_min(J_u) = {best_sigma:.3e} <= {SINGULAR_UPPER:g}"
        )
    elif best_sigma >= METIVIER_LOWER and all_converged:
        status = MetivierStatus.METIVIER
        cert = (
            f"alternating bottom-pair descent from {starts} seeded starts, all converged; "
            f"min sigma_min(J_u) on the unit sphere = {best_sigma:.6e} >= {METIVIER_LOWER:g}"
        )
    else:
        status = MetivierStatus.INCONCLUSIVE
        cert = (
            f"{starts} starts, min sigma_min(J_u) = {best_sigma:.3e}, "
            f"all converged = {all_converged}"
        )
    witness = best_u if status is MetivierStatus.NOT_METIVIER else None
    return MetivierVerdict(status, witness, cert, float(best_sigma), budget, seed, minima)
