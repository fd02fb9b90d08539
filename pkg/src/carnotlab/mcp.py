"""Measure contraction: comparison functions and empirical exponents.

Along a minimizing covector ``lam`` the intermediate-point map
``y -> Z_s(0, y)`` has Jacobian ``s^n J(s lam) / J(lam)``, where ``J`` is
the absolute Jacobian determinant of the exponential map.  MCP(0, N)
requires this to dominate ``s^N``, so

    exponent(lam, s) = log(s^n J(s lam) / J(lam)) / log(s)

is a pointwise lower bound for every admissible N.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .algebra import StructureConstants
from .errors import DomainError
from .geodesics import (
    Covector,
    _fd_jacobian,
    _rotation_scale,
    exp_batch,
    minimizing_check,
    refine,
    shoot,
)
from .jmaps import j_basis

JACOBIAN_COND_LIMIT = 1e12
DEFAULT_S_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


def s_K(K: float, t):
    """Model-space function: sin, identity or sinh according to the sign of K."""
    t = np.asarray(t, dtype=float)
    if K > 0:
        r = math.sqrt(K)
        out = np.sin(r * t) / r
    elif K < 0:
        r = math.sqrt(-K)
        out = np.sinh(r * t) / r
    else:
        out = t * 1.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DistortionQuery:
    K: float
    N: float
    s: float
    d: float

    def __post_init__(self):
        if self.N < 1:
            raise DomainError(f"N must be >= 1, got {self.N}")
        if not 0.0 <= self.s <= 1.0:
            raise DomainError(f"s must lie in [0, 1], got {self.s}")
        if self.d < 0:
            raise DomainError(f"d must be >= 0, got {self.d}")
        if self.K > 0 and self.N > 1 and self.d >= math.pi * math.sqrt((self.N - 1) / self.K):
            raise DomainError("d must be below pi * sqrt((N - 1)/K) when K > 0")


def mcp_integrand(q: DistortionQuery) -> float:
    """``s * [s_K(s d / a) / s_K(d / a)]^(N - 1)`` with ``a = sqrt(N - 1)``.

    The bracket is 1 when ``N == 1`` and ``0/0`` is read as 1.
    """
    if q.N == 1:
        return q.s
    a = math.sqrt(q.N - 1)
    if q.K < 0 and q.d > 0 and q.s > 0:
        # sinh ratio in log form, safe for large arguments
        x = math.sqrt(-q.K) * q.d / a
        log_ratio = x * (q.s - 1.0) + math.log(-math.expm1(-2 * q.s * x)) - math.log(-math.expm1(-2 * x))
        return q.s * math.exp((q.N - 1) * log_ratio)
    num = s_K(q.K, q.s * q.d / a)
    den = s_K(q.K, q.d / a)
    if den == 0.0:
        ratio = 1.0 if num == 0.0 else math.inf
    else:
        ratio = num / den
    return q.s * ratio ** (q.N - 1)


# --- Jacobian of the exponential map ---------------------------------------


@dataclass
class ExpJacobian:
    det: float
    cond: float
    flagged: bool

    def __float__(self) -> float:
        return self.det


def _fd_step(lam: np.ndarray) -> np.ndarray:
    return 1e-5 * (1.0 + np.abs(lam))


def _jacobians(sc: StructureConstants, jb, lams: np.ndarray) -> list[ExpJacobian]:
    """Central-difference derivatives of ``exp(., 1)`` at each row of ``lams``."""
    B, n = lams.shape
    h = _fd_step(lams)
    pert = np.repeat(lams[:, None, :], 2 * n, axis=1)
    idx = np.arange(n)
    pert[:, idx, idx] += h
    pert[:, n + idx, idx] -= h
    vals = exp_batch(sc, pert.reshape(-1, n), 1.0, jb).reshape(B, 2 * n, n)
    mats = np.swapaxes((vals[:, :n, :] - vals[:, n:, :]) / (2.0 * h[:, :, None]), 1, 2)
    out = []
    for D in mats:
        sv = np.linalg.svd(D, compute_uv=False)
        cond = math.inf if sv[-1] == 0.0 else float(sv[0] / sv[-1])
        det = float(abs(np.linalg.det(D)))
        out.append(ExpJacobian(det, cond, cond > JACOBIAN_COND_LIMIT or det == 0.0))
    return out


def exp_derivative(sc: StructureConstants, lam: Covector) -> np.ndarray:
    """``n x n`` central-difference derivative of ``lam -> exp_map(lam, 1)``."""
    jb = j_basis(sc)
    v = lam.vec[None, :]
    h = _fd_step(v[0])
    n = sc.n
    pert = np.repeat(v, 2 * n, axis=0)
    pert[np.arange(n), np.arange(n)] += h
    pert[n + np.arange(n), np.arange(n)] -= h
    vals = exp_batch(sc, pert, 1.0, jb)
    return ((vals[:n] - vals[n:]) / (2.0 * h[:, None])).T


def jacobian_exp(sc: StructureConstants, lam: Covector, info: bool = False):
    """Absolute Jacobian determinant of the exponential map at ``lam``."""
    jac = _jacobians(sc, j_basis(sc), lam.vec[None, :])[0]
    return jac if info else jac.det


# --- contraction exponents --------------------------------------------------


@dataclass
class ContractionSample:
    lam: Covector
    s: float
    exponent: float
    minimizing: Optional[bool]
    reason: str = ""

    @property
    def valid(self) -> bool:
        return math.isfinite(self.exponent)


def _exponent(n: int, s: float, j_s: ExpJacobian, j_1: ExpJacobian) -> tuple[float, str]:
    if j_1.flagged or j_s.flagged:
        return math.nan, "singular or ill-conditioned Jacobian"
    ratio = s**n * j_s.det / j_1.det
    return math.log(ratio) / math.log(s), ""


def contraction_exponent(
    sc: StructureConstants, lam: Covector, s: float, minimizing: Optional[bool] = None
) -> ContractionSample:
    if not 0.0 < s < 1.0:
        raise DomainError(f"s must lie strictly between 0 and 1, got {s}")
    jb = j_basis(sc)
    j_1, j_s = _jacobians(sc, jb, np.vstack([lam.vec, lam.scaled(s).vec]))
    value, reason = _exponent(sc.n, s, j_s, j_1)
    return ContractionSample(lam, s, value, minimizing, reason)


def exponent_profile(sc: StructureConstants, lam: Covector, s_grid: Sequence[float]) -> np.ndarray:
    """Exponent at every ``s`` in the grid, NaN where the Jacobian is flagged."""
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any((s_grid <= 0) | (s_grid >= 1)):
        raise DomainError("s_grid must lie in (0, 1)")
    jb = j_basis(sc)
    rows = np.vstack([lam.vec] + [lam.scaled(float(s)).vec for s in s_grid])
    jacs = _jacobians(sc, jb, rows)
    return np.array([_exponent(sc.n, float(s), js, jacs[0])[0] for s, js in zip(s_grid, jacs[1:])])


@dataclass
class NCEReport:
    value: float
    witness: Optional[Covector]
    witness_s: Optional[float]
    samples: int
    kept: int
    excluded: int
    discarded: int
    seed: int
    s_grid: tuple
    status: str
    rows: list = field(default_factory=list)

    @property
    def exclusion_rate(self) -> float:
        return self.excluded / self.samples if self.samples else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample", "lambda", "s", "exponent", "minimizing"])
        for idx, vec, s, value, flag in self.rows:
            writer.writerow([idx, " ".join(f"{x:.17g}" for x in vec), f"{s:.17g}", f"{value:.17g}", int(flag)])
        return buf.getvalue()


def sample_covector(sc: StructureConstants, rng: np.random.Generator, u_radius: float, horizontal_only: bool = False) -> Covector:
    """Unit first-layer momentum, vertical momentum uniform in radius."""
    xi = rng.standard_normal(sc.m)
    xi /= np.linalg.norm(xi)
    if horizontal_only or sc.d2 == 0:
        return Covector(xi, np.zeros(sc.d2))
    direction = rng.standard_normal(sc.d2)
    direction /= np.linalg.norm(direction)
    return Covector(xi, direction * rng.uniform(0.0, u_radius))


def nce_lower_bound(
    sc: StructureConstants,
    samples: int = 1000,
    s_grid: Sequence[float] = DEFAULT_S_GRID,
    seed: int = 0,
    *,
    u_radius: Optional[float] = None,
    horizontal_only: bool = False,
    filter_starts: int = 8,
    filter_inits: int = 1,
    covectors: Optional[Sequence[Covector]] = None,
) -> NCEReport:
    """Largest contraction exponent seen on minimizing sampled covectors.

    Sample ``i`` uses the stream ``(seed, i)``.  Covectors failing
    :func:`minimizing_check` are excluded and counted.  ``u_radius``
    defaults to ``2.5 pi`` over the largest ``|J_{Y_l}|``.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    s_grid = tuple(float(s) for s in s_grid)
    if u_radius is None:
        u_radius = 2.5 * math.pi / _rotation_scale(j_basis(sc)) if sc.d2 else 0.0
    best, witness, witness_s = -math.inf, None, None
    kept = excluded = discarded = 0
    rows = []
    for i in range(samples):
        if covectors is not None:
            lam = covectors[i % len(covectors)]
        else:
            lam = sample_covector(sc, np.random.default_rng([seed, i]), u_radius, horizontal_only)
        if not minimizing_check(sc, lam, starts=filter_starts, inits=filter_inits, seed=seed + i):
            excluded += 1
            continue
        profile = exponent_profile(sc, lam, s_grid)
        if not np.all(np.isfinite(profile)):
            discarded += 1
            continue
        kept += 1
        for s, value in zip(s_grid, profile):
            rows.append((i, lam.vec, s, float(value), True))
        k = int(np.argmax(profile))
        if profile[k] > best:
            best, witness, witness_s = float(profile[k]), lam, s_grid[k]
    status = "ok" if kept else "inconclusive"
    return NCEReport(
        best if kept else math.nan,
        witness,
        witness_s,
        samples,
        kept,
        excluded,
        discarded,
        seed,
        s_grid,
        status,
        rows,
    )


# --- Monte Carlo cross-check ----------------------------------------------


@dataclass
class VolumeRatio:
    ratio: float
    stderr: float
    points: int
    failures: int
    status: str
    jacobian_method: float  # same points, covector-space Jacobian ratio


def _uniform_ball(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, count) ** (1.0 / dim)
    return g * r[:, None]


def zs_volume_ratio(
    sc: StructureConstants,
    A_center,
    A_radius: float,
    s: float,
    mc_points: int = 200,
    seed: int = 0,
    *,
    starts: int = 16,
) -> VolumeRatio:
    """Monte Carlo estimate of ``mu(Z_s(0, A)) / mu(A)`` for a coordinate ball.

    For each uniform sample ``y`` a shortest covector is found by shooting
    and the map ``y -> exp(s * lam(y), 1)`` is differentiated in ``y`` by
    central differences, re-solving the shooting problem at each
    perturbed target from a warm start.  The mean absolute determinant is
    the change-of-variables volume ratio.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"s must lie in [0, 1], got {s}")
    center = np.asarray(A_center, dtype=float)
    n = sc.n
    jb = j_basis(sc)
    rng = np.random.default_rng(seed)
    ys = center + A_radius * _uniform_ball(rng, n, mc_points)
    dets, jac_method = [], []
    failures = 0
    for k, y in enumerate(ys):
        sol = shoot(sc, y, starts=starts, seed=seed * 100003 + k)
        if not sol.ok:
            failures += 1
            continue
        lam0, _ = refine(sc, sol.covector.vec, y)
        h = 1e-5 * (1.0 + np.abs(y))
        D = np.empty((n, n))
        for i in range(n):
            cols = []
            for sign in (1.0, -1.0):
                yp = y.copy()
                yp[i] += sign * h[i]
                lp, _ = refine(sc, lam0, yp)
                lp_s = lp.copy()
                lp_s *= s
                cols.append(exp_batch(sc, lp_s, 1.0, jb))
            D[:, i] = (cols[0] - cols[1]) / (2.0 * h[i])
        dets.append(abs(np.linalg.det(D)))
        if 0.0 < s < 1.0:
            j1, js = _jacobians(sc, jb, np.vstack([lam0, s * lam0]))
            jac_method.append(s**n * js.det / j1.det)
        else:
            jac_method.append(s**n if s == 0.0 else 1.0)
    done = len(dets)
    status = "ok" if failures <= 0.05 * mc_points and done else "inconclusive"
    if not done:
        return VolumeRatio(math.nan, math.nan, 0, failures, status, math.nan)
    dets = np.array(dets)
    # finite-difference floor: warm-started solves are accurate to ~1e-13
    fd_floor = 1e-7 * n * float(np.mean(dets))
    stderr = math.sqrt(float(np.var(dets, ddof=1)) / done + fd_floor**2) if done > 1 else fd_floor
    return VolumeRatio(float(np.mean(dets)), stderr, done, failures, status, float(np.mean(jac_method)))
