"""Normal geodesics, the exponential map, and Carnot-Carathéodory distances.

A covector ``(xi0, u0)`` generates the constant-speed curve from the
identity with horizontal velocity ``v(t) = exp(t J_{u0}) xi0``:

    x(t) = int_0^t v,      z(t) = 1/2 int_0^t [x(s), v(s)] ds.

Skew exponentials are evaluated through the symmetric eigenproblem of
``J^T J``: on each eigenspace with ``J^2 = -theta^2``,
``exp(sJ) = cos(s theta) + sin(s theta)/theta * J``.  The first layer is
then closed form and the second layer uses composite Gauss-Legendre
quadrature with a panel-doubling error check.

Two independent distance solvers are provided: multi-start shooting on the
exponential map, and a direct discretisation with piecewise-constant
controls solved by an augmented Lagrangian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize

from .algebra import (
    GroupPoint,
    StructureConstants,
    bracket_vec,
    dilation_vec,
    homogeneous_norm,
    mul_vec,
)
from .errors import DomainError, NumericalError
from .jmaps import j_basis

QUAD_ATOL = 1e-10
GL_ORDER = 16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)


@dataclass(frozen=True)
class Covector:
    xi0: np.ndarray
    u0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi0", np.array(self.xi0, dtype=float).reshape(-1))
        object.__setattr__(self, "u0", np.array(self.u0, dtype=float).reshape(-1))

    @classmethod
    def from_vec(cls, vec, m: int) -> "Covector":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        return cls(vec[:m], vec[m:])

    @property
    def vec(self) -> np.ndarray:
        return np.concatenate([self.xi0, self.u0])

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.xi0))

    def scaled(self, s: float) -> "Covector":
        """Time-rescaled covector: ``exp_map(lam.scaled(s), 1) == exp_map(lam, s)``."""
        return Covector(s * self.xi0, s * self.u0)


@dataclass
class GeodesicPath:
    covector: Covector
    times: np.ndarray
    points: np.ndarray  # (len(times), n)


# --- exponential map --------------------------------------------------------


def _spectral_data(jb: np.ndarray, u0: np.ndarray):
    J = np.einsum("...l,lij->...ij", u0, jb)
    S = -np.einsum("...ij,...jk->...ik", J, J)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    theta2, V = np.linalg.eigh(S)
    theta = np.sqrt(np.clip(theta2, 0.0, None))
    return J, theta, V


def _flow_coefficients(theta: np.ndarray, s: np.ndarray):
    """``cos``, ``sin/theta`` and ``(1 - cos)/theta^2`` at times ``s``.

    ``theta`` has shape ``(..., m)``, ``s`` shape ``(K,)``; results are
    ``(..., K, m)``.  Built from half-angle values, which keeps the
    versine accurate for small rotations.
    """
    th = theta[..., None, :]
    small = th < 1e-8
    safe = np.where(small, 1.0, th)
    half = 0.5 * s[:, None] * th
    sh = np.sin(half)
    ch = np.cos(half)
    cos = 1.0 - 2.0 * sh * sh
    sinc = 2.0 * sh * ch / safe
    vers = 2.0 * sh * sh / (safe * safe)
    if np.any(small):
        s_col = s[:, None] + 0.0 * th
        sinc = np.where(small, s_col, sinc)
        vers = np.where(small, 0.5 * s_col * s_col, vers)
    return cos, sinc, vers


def _gl_rule(t: float, panels: int):
    edges = np.linspace(0.0, t, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _second_layer(c, V, a, b, theta, t, panels):
    nodes, weights = _gl_rule(t, panels)
    cos, sinc, vers = _flow_coefficients(theta, nodes)
    a_ = a[..., None, :]
    b_ = b[..., None, :]
    Vt = np.swapaxes(V, -1, -2)
    v = np.matmul(cos * a_ + sinc * b_, Vt)
    x = np.matmul(sinc * a_ + vers * b_, Vt)
    integrand = bracket_vec(c, x, v)
    return 0.5 * np.einsum("k,...kl->...l", weights, integrand)


def _panel_count(theta_max: float, t: float) -> int:
    # the integrand oscillates at up to twice the largest rotation speed;
    # 16-point Gauss-Legendre stays far below QUAD_ATOL while 2*theta*h <= 6
    return max(1, int(math.ceil(2.0 * theta_max * t / 6.0)))


def exp_batch(
    sc: StructureConstants,
    lam: np.ndarray,
    t: float = 1.0,
    jb: np.ndarray | None = None,
    check: bool = False,
) -> np.ndarray:
    """Exponential map for a batch of covector vectors ``(..., n)``.

    The panel count is chosen a priori from the largest rotation speed.
    With ``check=True`` the result is also compared against a run with
    twice the panels, doubling until the difference is below ``QUAD_ATOL``.
    """
    lam = np.asarray(lam, dtype=float)
    m = sc.m
    xi0, u0 = lam[..., :m], lam[..., m:]
    out = np.zeros(lam.shape[:-1] + (sc.n,))
    if t == 0.0:
        return out
    if jb is None:
        jb = j_basis(sc)
    J, theta, V = _spectral_data(jb, u0)
    a = np.einsum("...ji,...j->...i", V, xi0)
    b = np.einsum("...ji,...j->...i", V, np.einsum("...ij,...j->...i", J, xi0))
    tt = np.array([t])
    _, sinc, vers = _flow_coefficients(theta, tt)
    out[..., :m] = np.einsum("...ij,...j->...i", V, sinc[..., 0, :] * a + vers[..., 0, :] * b)
    if sc.d2 == 0:
        return out
    tmax = float(np.max(theta)) if theta.size else 0.0
    panels = _panel_count(tmax, t)
    z = _second_layer(sc.c, V, a, b, theta, t, panels)
    if check:
        z2 = _second_layer(sc.c, V, a, b, theta, t, 2 * panels)
        err = float(np.max(np.abs(z2 - z))) if z.size else 0.0
        if err > QUAD_ATOL:
            for _ in range(5):
                panels *= 2
                z = z2
                z2 = _second_layer(sc.c, V, a, b, theta, t, 2 * panels)
                err = float(np.max(np.abs(z2 - z)))
                if err <= QUAD_ATOL:
                    break
            else:
                raise NumericalError(
                    f"second-layer quadrature did not reach {QUAD_ATOL:g} "
                    f"(last difference {err:.3e} with {2 * panels} panels, "
                    f"max rotation speed {tmax:.3g})"
                )
        z = z2
    out[..., m:] = z
    return out


def exp_map(sc: StructureConstants, lam: Covector, t: float = 1.0) -> GroupPoint:
    """Point reached at time ``t`` by the normal geodesic of ``lam``."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return GroupPoint.from_vec(exp_batch(sc, lam.vec, t, check=True), sc.m)


def horizontal_velocity(sc: StructureConstants, lam: Covector, t: float) -> np.ndarray:
    jb = j_basis(sc)
    J, theta, V = _spectral_data(jb, lam.u0)
    a = V.T @ lam.xi0
    b = V.T @ (J @ lam.xi0)
    cos, sinc, _ = _flow_coefficients(theta, np.array([float(t)]))
    return V @ (cos[0] * a + sinc[0] * b)


def sample_geodesic(sc: StructureConstants, lam: Covector, times) -> GeodesicPath:
    times = np.asarray(times, dtype=float)
    pts = np.array([exp_batch(sc, lam.vec, float(t), check=True) for t in times])
    return GeodesicPath(lam, times, pts)


def left_frame(sc: StructureConstants, p: GroupPoint, v) -> np.ndarray:
    """Left-invariant horizontal vector ``v + 1/2 [p, v]`` at ``p``."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([v, 0.5 * bracket_vec(sc.c, p.xi, v)])


def _horizontality_defect(sc: StructureConstants, pts: np.ndarray) -> np.ndarray:
    m = sc.m
    x, z = pts[:, :m], pts[:, m:]
    dx = np.diff(x, axis=0)
    dz = np.diff(z, axis=0)
    return np.linalg.norm(dz - 0.5 * bracket_vec(sc.c, x[:-1], dx), axis=1)


def path_length(sc: StructureConstants, path: Union[GeodesicPath, np.ndarray]) -> float:
    """Length of a sampled geodesic or of a horizontal polygon.

    Polygons are vertex arrays whose consecutive vertices differ by a right
    translation along a first-layer vector; their length is the sum of the
    first-layer increments.  Geodesic samples are checked against the
    horizontal constraint up to the local defect of the sampling.
    """
    if isinstance(path, GeodesicPath):
        pts = path.points
        defect = _horizontality_defect(sc, pts)
        h = np.diff(path.times)
        speed = path.covector.speed
        jnorm = float(np.linalg.norm(np.tensordot(path.covector.u0, j_basis(sc), axes=1), 2))
        allowed = 1e-9 * (1.0 + np.abs(pts[1:]).max(axis=1)) + sc.bracket_scale() * speed**2 * jnorm * h**3
        if np.any(defect > allowed):
            raise DomainError("sampled path is not horizontal")
        return float((path.times[-1] - path.times[0]) * speed)
    pts = np.asarray(path, dtype=float)
    defect = _horizontality_defect(sc, pts)
    scale = 1.0 + float(np.abs(pts).max()) if pts.size else 1.0
    if np.any(defect > 1e-9 * scale):
        raise DomainError(f"polygon is not horizontal (max defect {defect.max():.3e})")
    return float(np.sum(np.linalg.norm(np.diff(pts[:, : sc.m], axis=0), axis=1)))


# --- shooting ---------------------------------------------------------------


@dataclass
class ShootingResult:
    length: Optional[float]
    covector: Optional[Covector]
    residual: float
    converged: int
    starts: int
    seed: int
    lengths: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.length is not None


def _rotation_scale(jb: np.ndarray) -> float:
    norms = [np.linalg.norm(jb[i], 2) for i in range(jb.shape[0])]
    return max(max(norms, default=0.0), 1e-12)


def _fd_jacobian(sc, jb, lam: np.ndarray):
    """Central differences of ``exp_batch`` at each row of ``lam``; (B, n, n)."""
    B, n = lam.shape
    h = 1e-6 * (1.0 + np.abs(lam))
    pert = np.repeat(lam[:, None, :], 2 * n, axis=1)
    idx = np.arange(n)
    pert[:, idx, idx] += h
    pert[:, n + idx, idx] -= h
    vals = exp_batch(sc, pert.reshape(-1, n), 1.0, jb).reshape(B, 2 * n, n)
    jac = (vals[:, :n, :] - vals[:, n:, :]) / (2.0 * h[:, :, None])
    return np.swapaxes(jac, 1, 2)


def _shooting_starts(sc, jb, target: np.ndarray, starts: int, seed: int) -> np.ndarray:
    m = sc.m
    kappa = _rotation_scale(jb)
    rows = [np.concatenate([target[:m], np.zeros(sc.d2)])]
    for k in range(1, starts):
        rng = np.random.default_rng([seed, k])
        direction = rng.standard_normal(m)
        if k % 2 == 0 and np.linalg.norm(target[:m]) > 0:
            direction = direction * 0.5 + target[:m] / np.linalg.norm(target[:m])
        direction /= np.linalg.norm(direction)
        udir = rng.standard_normal(sc.d2)
        udir /= max(np.linalg.norm(udir), 1e-300)
        u0 = udir * rng.uniform(0.0, 2.0 * np.pi / kappa)
        guess = exp_batch(sc, np.concatenate([direction, u0]), 1.0, jb)
        scale = 1.0 / max(homogeneous_norm(sc, guess), 1e-12)
        rows.append(np.concatenate([scale * direction, u0]))
    return np.array(rows)


def shoot(
    sc: StructureConstants,
    target,
    *,
    starts: int = 32,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
    initial: np.ndarray | None = None,
) -> ShootingResult:
    """Multi-start damped Gauss-Newton for ``exp(lam, 1) = target``.

    The target is first dilated to unit homogeneous norm; lengths and
    covectors are mapped back at the end.  Among converged starts the
    shortest geodesic wins, ties going to the lower start index.
    """
    target = np.asarray(target, dtype=float)
    if starts <= 0:
        raise DomainError("starts must be positive")
    rho = homogeneous_norm(sc, target)
    if rho == 0.0:
        return ShootingResult(0.0, Covector(np.zeros(sc.m), np.zeros(sc.d2)), 0.0, 1, 1, seed, [0.0])
    jb = j_basis(sc)
    goal = dilation_vec(sc, 1.0 / rho, target)
    lam = _shooting_starts(sc, jb, goal, starts, seed)
    if initial is not None:
        init = np.asarray(initial, dtype=float).reshape(-1, sc.n).copy()
        init[:, : sc.m] /= rho
        lam = np.vstack([init, lam])
    B, n = lam.shape
    bound = tol * (1.0 + np.linalg.norm(goal))
    res = exp_batch(sc, lam, 1.0, jb) - goal
    rnorm = np.linalg.norm(res, axis=1)
    mu = np.full(B, 1e-3)
    active = rnorm > bound
    eye = np.eye(n)
    checkpoint = rnorm.copy()
    for it in range(1, max_iter + 1):
        if not np.any(active):
            break
        if it % 10 == 0:
            # drop starts that are stuck in a local minimum of the residual
            active &= rnorm < 0.5 * checkpoint
            checkpoint = rnorm.copy()
            if not np.any(active):
                break
        ids = np.flatnonzero(active)
        jac = _fd_jacobian(sc, jb, lam[ids])
        jt = np.swapaxes(jac, 1, 2)
        jtj = jt @ jac
        grad = np.einsum("bij,bj->bi", jt, res[ids])
        scale = np.trace(jtj, axis1=1, axis2=2) / n + 1e-300
        system = jtj + (mu[ids] * scale)[:, None, None] * eye
        step = -np.linalg.solve(system, grad[..., None])[..., 0]
        trial = lam[ids] + step
        tres = exp_batch(sc, trial, 1.0, jb) - goal
        tnorm = np.linalg.norm(tres, axis=1)
        better = tnorm < rnorm[ids]
        good = ids[better]
        lam[good], res[good], rnorm[good] = trial[better], tres[better], tnorm[better]
        mu[good] = np.maximum(mu[good] / 3.0, 1e-12)
        bad = ids[~better]
        mu[bad] *= 4.0
        active = (rnorm > bound) & (mu < 1e10)
    done = rnorm <= bound
    lengths = [float(rho * np.linalg.norm(lam[i, : sc.m])) for i in np.flatnonzero(done)]
    if not lengths:
        return ShootingResult(None, None, float(rho * rnorm.min()), 0, B, seed)
    order = np.flatnonzero(done)
    speeds = np.linalg.norm(lam[order, : sc.m], axis=1)
    best = int(order[np.argmin(speeds)])
    cov = Covector(rho * lam[best, : sc.m], lam[best, sc.m :])
    final = exp_batch(sc, cov.vec, 1.0, jb) - target
    return ShootingResult(
        float(rho * speeds.min()),
        cov,
        float(np.linalg.norm(final)),
        int(done.sum()),
        B,
        seed,
        sorted(lengths),
    )


def refine(
    sc: StructureConstants,
    lam0,
    target,
    *,
    tol: float = 1e-13,
    max_iter: int = 60,
) -> tuple[np.ndarray, float]:
    """Damped Gauss-Newton from a single warm start; returns ``(lam, residual)``."""
    jb = j_basis(sc)
    lam = np.array(lam0, dtype=float).reshape(1, sc.n)
    target = np.asarray(target, dtype=float)
    res = exp_batch(sc, lam, 1.0, jb)[0] - target
    rnorm = float(np.linalg.norm(res))
    mu = 1e-6
    bound = tol * (1.0 + np.linalg.norm(target))
    for _ in range(max_iter):
        if rnorm <= bound or mu > 1e10:
            break
        jac = _fd_jacobian(sc, jb, lam)[0]
        jtj = jac.T @ jac
        scale = np.trace(jtj) / sc.n + 1e-300
        step = -np.linalg.solve(jtj + mu * scale * np.eye(sc.n), jac.T @ res)
        trial = lam + step
        tres = exp_batch(sc, trial, 1.0, jb)[0] - target
        tnorm = float(np.linalg.norm(tres))
        if tnorm < rnorm:
            lam, res, rnorm = trial, tres, tnorm
            mu = max(mu / 3.0, 1e-15)
        else:
            mu *= 4.0
    return lam[0], rnorm


# --- direct control discretisation ------------------------------------------


@dataclass
class ControlResult:
    length: float
    residual: float
    energy: float
    steps: int
    inits: int
    seed: int
    controls: np.ndarray  # (steps, m), in original units


def polygon_from_controls(sc: StructureConstants, W: np.ndarray) -> np.ndarray:
    """Vertices of the horizontal polygon driven by controls ``W`` on [0, 1]."""
    N = W.shape[0]
    pts = np.zeros((N + 1, sc.n))
    for k in range(N):
        step = np.concatenate([W[k] / N, np.zeros(sc.d2)])
        pts[k + 1] = mul_vec(sc, pts[k], step)
    return pts


def _endpoint_and_grad(sc, W):
    """Endpoint of the control polygon and the pieces of its derivative."""
    N = W.shape[0]
    csum = np.cumsum(W, axis=0)
    before = np.vstack([np.zeros((1, W.shape[1])), csum[:-1]])  # S_k
    after = csum[-1] - csum  # T_k
    x = csum[-1] / N
    z = bracket_vec(sc.c, before, W).sum(axis=0) / (2.0 * N * N)
    return np.concatenate([x, z]), before, after


def _al_solve(sc, goal, W0, rng_tag):
    N, m = W0.shape
    n = sc.n
    mult = np.zeros(n)
    penalty = 10.0
    W = W0.copy()
    prev_viol = np.inf

    def fun(flat):
        W = flat.reshape(N, m)
        end, before, after = _endpoint_and_grad(sc, W)
        viol = end - goal
        y = mult + penalty * viol
        val = np.sum(W * W) / N + mult @ viol + 0.5 * penalty * viol @ viol
        grad = 2.0 * W / N + y[:m][None, :] / N
        if sc.d2:
            # d z_l / d w_k = C_l (T_k - S_k) / (2 N^2), C_l[i, j] = c[i, j, l]
            Cy = np.einsum("ijl,l->ij", sc.c, y[m:])
            grad += (after - before) @ Cy.T / (2.0 * N * N)
        return val, grad.ravel()

    for _ in range(40):
        out = minimize(
            fun, W.ravel(), jac=True, method="L-BFGS-B",
            options={"maxiter": 4000, "gtol": 1e-13, "ftol": 1e-16, "maxcor": 30},
        )
        W = out.x.reshape(N, m)
        end, _, _ = _endpoint_and_grad(sc, W)
        viol = end - goal
        vnorm = float(np.linalg.norm(viol))
        mult = mult + penalty * viol
        if vnorm <= 1e-11:
            break
        if vnorm > 0.25 * prev_viol:
            penalty = min(penalty * 10.0, 1e9)
        prev_viol = vnorm
    end, _, _ = _endpoint_and_grad(sc, W)
    return W, float(np.linalg.norm(end - goal))


def control_distance(
    sc: StructureConstants,
    target,
    *,
    steps: int = 256,
    inits: int = 3,
    seed: int = 0,
    feas_tol: float = 1e-7,
) -> ControlResult:
    """Shortest horizontal polygon with ``steps`` piecewise-constant controls.

    Minimises the discrete energy ``sum |w_k|^2 / steps`` subject to the
    endpoint constraint with an augmented Lagrangian.  Random smooth
    initial controls (a few Fourier modes) come from the stream
    ``(seed, 1000 + init)``; the shortest feasible polygon wins.
    """
    target = np.asarray(target, dtype=float)
    rho = homogeneous_norm(sc, target)
    if rho == 0.0:
        return ControlResult(0.0, 0.0, 0.0, steps, 0, seed, np.zeros((steps, sc.m)))
    goal = dilation_vec(sc, 1.0 / rho, target)
    tgrid = (np.arange(steps) + 0.5) / steps
    best = None
    for k in range(inits):
        rng = np.random.default_rng([seed, 1000 + k])
        W0 = np.tile(goal[: sc.m], (steps, 1))
        for f in range(1, 4):
            a, b = rng.standard_normal((2, sc.m)) * (1.5 / f)
            W0 += np.outer(np.cos(2 * np.pi * f * tgrid), a) + np.outer(np.sin(2 * np.pi * f * tgrid), b)
        W, viol = _al_solve(sc, goal, W0, k)
        if viol > feas_tol * (1.0 + np.linalg.norm(goal)):
            continue
        length = float(np.sum(np.linalg.norm(W, axis=1)) / steps)
        if best is None or length < best[0]:
            best = (length, viol, W)
    if best is None:
        raise NumericalError(f"control solver found no feasible polygon in {inits} initialisations")
    length, viol, W = best
    return ControlResult(
        rho * length,
        rho**2 * viol,
        float(np.sum(W * W) / steps) * rho**2,
        steps,
        inits,
        seed,
        W * rho,
    )


# --- distance front end -----------------------------------------------------


@dataclass
class DistanceEstimate:
    method: str
    shooting: Optional[float]
    control: Optional[float]
    shooting_residual: Optional[float]
    control_residual: Optional[float]
    starts: int
    seed: int
    status: str = "ok"
    covector: Optional[Covector] = None

    @property
    def min(self) -> float:
        vals = [v for v in (self.shooting, self.control) if v is not None]
        if not vals:
            raise NumericalError("no distance value available")
        return min(vals)

    @property
    def value(self) -> float:
        if self.method == "shooting":
            if self.shooting is None:
                raise NumericalError("shooting did not converge")
            return self.shooting
        if self.method == "control":
            return self.control  # type: ignore[return-value]
        return self.min

    @property
    def relative_gap(self) -> Optional[float]:
        if self.shooting is None or self.control is None:
            return None
        scale = max(self.shooting, self.control)
        return 0.0 if scale == 0.0 else abs(self.shooting - self.control) / scale


METHODS = ("shooting", "control", "both")


def distance(
    sc: StructureConstants,
    p: GroupPoint,
    q: GroupPoint,
    method: str = "shooting",
    *,
    starts: int = 32,
    seed: int = 0,
    steps: int = 256,
    inits: int = 3,
) -> DistanceEstimate:
    """CC distance from ``p`` to ``q`` after left translation to the identity."""
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")
    target = mul_vec(sc, -p.vec, q.vec)
    sh = ct = None
    if method in ("shooting", "both"):
        sh = shoot(sc, target, starts=starts, seed=seed)
    if method in ("control", "both"):
        ct = control_distance(sc, target, steps=steps, inits=inits, seed=seed)
    status = "ok"
    if sh is not None and not sh.ok and ct is None:
        status = "inconclusive"
    return DistanceEstimate(
        method=method,
        shooting=sh.length if sh is not None else None,
        control=ct.length if ct is not None else None,
        shooting_residual=sh.residual if sh is not None else None,
        control_residual=ct.residual if ct is not None else None,
        starts=sh.starts if sh is not None else 0,
        seed=seed,
        status=status,
        covector=sh.covector if sh is not None else None,
    )


def minimizing_check(sc: StructureConstants, lam: Covector, **options) -> bool:
    """Heuristic: no horizontal path found shorter than the geodesic itself."""
    speed = lam.speed
    if speed == 0.0 or not np.any(lam.u0):
        return True
    end = exp_map(sc, lam, 1.0)
    est = distance(sc, GroupPoint.zero(sc), end, "both", **options)
    return speed <= est.min + 1e-3 * (1.0 + speed)
