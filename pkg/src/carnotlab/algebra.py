"""Step-two Carnot groups given by structure constants.

A group is fixed by orthonormal bases ``X_1..X_m`` of the first layer and
``Y_1..Y_d2`` of the second layer together with the tensor ``c[i, j, l]``
such that ``[X_i, X_j] = sum_l c[i, j, l] Y_l``.  Points are written in
exponential coordinates ``p = xi + u`` and multiplied with

    a * b = a + b + 1/2 [a, b].

Coordinates are always taken in the fixed orthonormal bases, so the inner
product on the algebra is the plain dot product.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

from .errors import DomainError, SpecError

#: relative singular-value threshold for every rank decision in the package
TAU_RANK = 1e-9


class StructureConstants:
    """Immutable, antisymmetric structure-constant tensor.

    Only the entries with ``i < j`` are read from the input; the lower
    triangle is mirrored, so antisymmetry holds by construction.  Use
    :func:`validate_spec` on raw arrays to detect inputs that were not
    antisymmetric in the first place.
    """

    __slots__ = ("m", "d2", "_c", "name")

    def __init__(self, c: np.ndarray, name: str = ""):
        c = np.asarray(c, dtype=float)
        if c.ndim != 3 or c.shape[0] != c.shape[1]:
            raise SpecError(f"structure constants must have shape (m, m, d2), got {c.shape}")
        m, _, d2 = c.shape
        upper = np.triu(np.ones((m, m), dtype=bool), k=1)
        full = np.where(upper[:, :, None], c, 0.0)
        full = full - full.transpose(1, 0, 2)
        full.setflags(write=False)
        self.m = int(m)
        self.d2 = int(d2)
        self._c = full
        self.name = name

    @classmethod
    def from_pairs(
        cls,
        m: int,
        d2: int,
        pairs: Mapping[tuple[int, int], Mapping[int, float]],
        name: str = "",
    ) -> "StructureConstants":
        """Build from ``{(i, j): {l: value}}`` with 0-based ``i < j``."""
        c = np.zeros((m, m, d2))
        for (i, j), row in pairs.items():
            if not 0 <= i < j < m:
                raise SpecError(f"pair ({i}, {j}) must satisfy 0 <= i < j < m={m}")
            for ell, value in row.items():
                if not 0 <= ell < d2:
                    raise SpecError(f"second-layer index {ell} out of range for d2={d2}")
                c[i, j, ell] = float(value)
        return cls(c, name=name)

    @property
    def c(self) -> np.ndarray:
        """Full antisymmetric tensor of shape ``(m, m, d2)`` (read-only)."""
        return self._c

    @property
    def n(self) -> int:
        return self.m + self.d2

    @property
    def Q(self) -> int:
        return self.m + 2 * self.d2

    def bracket_scale(self) -> float:
        """Frobenius norm of the tensor; bounds ``|[a, b]| <= scale |a| |b|``."""
        return float(np.sqrt(np.sum(self._c**2)))

    def pair_matrix(self) -> np.ndarray:
        """The ``d2 x m(m-1)/2`` matrix with columns ``(c[i, j, :])`` for ``i < j``."""
        iu, ju = np.triu_indices(self.m, k=1)
        return self._c[iu, ju, :].T.copy()

    def scaled(self, factor: float) -> "StructureConstants":
        return StructureConstants(self._c * factor, name=self.name)

    def digest(self) -> str:
        """Stable SHA-256 of the dimensions and the upper-triangle entries."""
        iu, ju = np.triu_indices(self.m, k=1)
        payload = f"{self.m} {self.d2}\n".encode() + np.ascontiguousarray(
            self._c[iu, ju, :], dtype="<f8"
        ).tobytes()
        return hashlib.sha256(payload).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StructureConstants):
            return NotImplemented
        return self.m == other.m and self.d2 == other.d2 and np.array_equal(self._c, other._c)

    def __hash__(self) -> int:
        return hash(self.digest())

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<StructureConstants{label} m={self.m} d2={self.d2}>"


@dataclass(frozen=True)
class GroupPoint:
    """Point ``xi + u`` in exponential coordinates."""

    xi: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).reshape(-1)
        u = np.array(self.u, dtype=float).reshape(-1)
        xi.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_vec(cls, vec, m: int) -> "GroupPoint":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        return cls(vec[:m], vec[m:])

    @classmethod
    def zero(cls, sc: StructureConstants) -> "GroupPoint":
        return cls(np.zeros(sc.m), np.zeros(sc.d2))

    @property
    def vec(self) -> np.ndarray:
        return np.concatenate([self.xi, self.u])

    def __add__(self, other: "GroupPoint") -> "GroupPoint":
        return GroupPoint(self.xi + other.xi, self.u + other.u)

    def __sub__(self, other: "GroupPoint") -> "GroupPoint":
        return GroupPoint(self.xi - other.xi, self.u - other.u)

    def __neg__(self) -> "GroupPoint":
        return GroupPoint(-self.xi, -self.u)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupPoint):
            return NotImplemented
        return np.array_equal(self.xi, other.xi) and np.array_equal(self.u, other.u)

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "GroupPoint", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.vec, other.vec, rtol=0.0, atol=atol))


@dataclass
class ValidationReport:
    m: int
    d2: int
    antisymmetric: bool
    rank: int
    bracket_generating: bool
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.m >= 2 and self.d2 >= 1 and self.antisymmetric and self.bracket_generating


def numerical_rank(mat: np.ndarray, tau: float = TAU_RANK) -> int:
    """Number of singular values above ``tau`` times the largest one."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tau * sv[0]))


def validate_spec(spec: Union[StructureConstants, np.ndarray]) -> ValidationReport:
    """Check antisymmetry (exact) and the bracket-generating rank condition.

    ``spec`` may be a constructed :class:`StructureConstants` or a raw array
    of shape ``(m, m, d2)`` as it came out of a parser.
    """
    messages: list[str] = []
    raw = spec.c if isinstance(spec, StructureConstants) else np.asarray(spec, dtype=float)
    if raw.ndim != 3 or raw.shape[0] != raw.shape[1]:
        raise SpecError(f"expected shape (m, m, d2), got {raw.shape}")
    m, _, d2 = raw.shape
    if m < 2:
        messages.append(f"first layer dimension m={m} must be >= 2")
    if d2 < 1:
        messages.append(f"second layer dimension d2={d2} must be >= 1")
    antisym = bool(np.array_equal(raw, -raw.transpose(1, 0, 2)))
    if not antisym:
        bad = np.argwhere(raw != -raw.transpose(1, 0, 2))[0]
        messages.append(
            "antisymmetry fails at (i, j, l) = (%d, %d, %d)" % tuple(int(b) + 1 for b in bad)
        )
    iu, ju = np.triu_indices(m, k=1)
    rank = numerical_rank(raw[iu, ju, :].T) if d2 > 0 and len(iu) else 0
    generating = d2 >= 1 and rank == d2
    if not generating:
        messages.append(
            f"rank {rank} < d2 = {d2}: not a step-two Carnot group of the declared dimensions"
        )
    return ValidationReport(m, d2, antisym, rank, generating, messages)


def require_valid(sc: StructureConstants) -> StructureConstants:
    report = validate_spec(sc)
    if not report.ok:
        raise SpecError("; ".join(report.messages))
    return sc


def _check_dims(sc: StructureConstants, *points: GroupPoint) -> None:
    for p in points:
        if p.xi.shape != (sc.m,) or p.u.shape != (sc.d2,):
            raise SpecError(
                f"point has dims ({p.xi.size}, {p.u.size}), group has ({sc.m}, {sc.d2})"
            )


def bracket_vec(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bracket of first-layer coordinate arrays; broadcasts over leading axes."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    m, _, d2 = c.shape
    left = (a.reshape(-1, m) @ c.reshape(m, m * d2)).reshape(a.shape[:-1] + (m, d2))
    return np.einsum("...j,...jl->...l", b, left)


def bracket(sc: StructureConstants, a: GroupPoint, b: GroupPoint) -> GroupPoint:
    _check_dims(sc, a, b)
    return GroupPoint(np.zeros(sc.m), bracket_vec(sc.c, a.xi, b.xi))


def mul_vec(sc: StructureConstants, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = sc.m
    out = np.asarray(a, dtype=float) + np.asarray(b, dtype=float)
    out[..., m:] += 0.5 * bracket_vec(sc.c, a[..., :m], b[..., :m])
    return out


def group_mul(sc: StructureConstants, a: GroupPoint, b: GroupPoint) -> GroupPoint:
    _check_dims(sc, a, b)
    return GroupPoint(a.xi + b.xi, a.u + b.u + 0.5 * bracket_vec(sc.c, a.xi, b.xi))


def group_inv(a: GroupPoint) -> GroupPoint:
    return -a


def dilation(sc: StructureConstants, lam: float, p: GroupPoint) -> GroupPoint:
    if not lam > 0:
        raise DomainError(f"dilation factor must be positive, got {lam}")
    _check_dims(sc, p)
    return GroupPoint(lam * p.xi, lam * lam * p.u)


def dilation_vec(sc: StructureConstants, lam: float, vec: np.ndarray) -> np.ndarray:
    out = np.array(vec, dtype=float)
    out[..., : sc.m] *= lam
    out[..., sc.m :] *= lam * lam
    return out


def dims(sc: StructureConstants) -> tuple[int, int]:
    """Topological dimension ``n`` and homogeneous dimension ``Q``."""
    return sc.n, sc.Q


def homogeneous_norm(sc: StructureConstants, vec: np.ndarray) -> float:
    """Gauge ``|xi| + sqrt(|u|)``, 1-homogeneous under dilations."""
    vec = np.asarray(vec, dtype=float)
    return float(np.linalg.norm(vec[: sc.m]) + np.sqrt(np.linalg.norm(vec[sc.m :])))


# --- builtin groups -------------------------------------------------------


def heisenberg() -> StructureConstants:
    """First Heisenberg group, ``[X_1, X_2] = Y_1``."""
    return StructureConstants.from_pairs(2, 1, {(0, 1): {0: 1.0}}, name="heisenberg")


def euclidean(m: int) -> StructureConstants:
    """Abelian ``R^m`` with an empty second layer (not a valid Carnot spec)."""
    return StructureConstants(np.zeros((m, m, 0)), name=f"euclidean{m}")


# --- text format ----------------------------------------------------------


def _parse_number(token: str) -> float:
    try:
        return float(Fraction(token))
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecError(f"cannot parse number {token!r}") from exc


def parse_spec_text(text: str) -> np.ndarray:
    """Parse the group-spec text format into a raw ``(m, m, d2)`` array.

    Lines ``c i j l value`` with ``i < j`` are mirrored into ``(j, i)``.
    Lines with ``i >= j`` are stored verbatim so that :func:`validate_spec`
    reports the antisymmetry violation instead of silently fixing it.
    """
    lines = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line.split()))
    if len(lines) < 2 or lines[0][1][0] != "m" or lines[1][1][0] != "d2":
        raise SpecError("spec must start with 'm <int>' and 'd2 <int>' lines")
    try:
        m = int(lines[0][1][1])
        d2 = int(lines[1][1][1])
    except (IndexError, ValueError) as exc:
        raise SpecError("malformed 'm' or 'd2' line") from exc
    if m < 1 or d2 < 0:
        raise SpecError(f"invalid dimensions m={m}, d2={d2}")
    raw = np.zeros((m, m, d2))
    for lineno, tokens in lines[2:]:
        if tokens[0] != "c" or len(tokens) != 5:
            raise SpecError(f"line {lineno}: expected 'c <i> <j> <l> <value>'")
        try:
            i, j, ell = (int(t) - 1 for t in tokens[1:4])
        except ValueError as exc:
            raise SpecError(f"line {lineno}: indices must be integers") from exc
        if not (0 <= i < m and 0 <= j < m and 0 <= ell < d2):
            raise SpecError(f"line {lineno}: index out of range")
        value = _parse_number(tokens[4])
        raw[i, j, ell] = value
        if i < j:
            raw[j, i, ell] = -value
    return raw


def format_spec_text(sc: StructureConstants) -> str:
    out = [f"m {sc.m}", f"d2 {sc.d2}"]
    for i in range(sc.m):
        for j in range(i + 1, sc.m):
            for ell in range(sc.d2):
                value = sc.c[i, j, ell]
                if value != 0.0:
                    out.append(f"c {i + 1} {j + 1} {ell + 1} {float(value)!r}")
    return "\n".join(out) + "\n"


def load_spec(path: Union[str, Path], name: str | None = None) -> StructureConstants:
    """Read, validate and construct a spec from a file."""
    path = Path(path)
    raw = parse_spec_text(path.read_text(encoding="utf-8"))
    report = validate_spec(raw)
    if not report.ok:
        raise SpecError(f"{path}: " + "; ".join(report.messages))
    return StructureConstants(raw, name=name or path.stem)


def as_points(sc: StructureConstants, vecs: Iterable) -> list[GroupPoint]:
    return [GroupPoint.from_vec(v, sc.m) for v in vecs]
