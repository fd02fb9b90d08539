"""A one-parameter family of step-two groups and the N_0 semicontinuity test.

The family lives on a 4 + 3 dimensional algebra with brackets

    [X_0, X_i] = Y_i            (i = 1, 2, 3)
    [X_1, X_2] = Y_3 / k,  [X_1, X_3] = -Y_2 / k,  [X_2, X_3] = Y_1 / k

and ``k = inf`` gives the star-graph group where the last three vanish.
Every finite member is Métivier (``J_u^2`` has eigenvalues ``-|u|^2`` and
``-|u|^2 / k^2``), so its N_0 is ``dim g1 + 3 dim g2 = 13``, while the
limit member has N_0 = 17.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .algebra import GroupPoint, StructureConstants, bracket_vec
from .filtration import n0_search
from .geodesics import distance
from .jmaps import MetivierStatus, metivier_check

Index = Union[int, float]
DEFAULT_K_LIST = (1, 2, 4, 8, 16, 32, 64)


def gk_member(k: Index) -> StructureConstants:
    if k != math.inf and (k != int(k) or k < 1):
        raise ValueError(f"k must be a positive integer or inf, got {k}")
    t = 0.0 if k == math.inf else 1.0 / k
    label = "inf" if k == math.inf else str(int(k))
    pairs = {
        (0, 1): {0: 1.0},
        (0, 2): {1: 1.0},
        (0, 3): {2: 1.0},
        (1, 2): {2: t},
        (1, 3): {1: -t},
        (2, 3): {0: t},
    }
    return StructureConstants.from_pairs(4, 3, pairs, name=f"gk:{label}")


@dataclass
class GroupFamily:
    name: str
    generator: Callable[[Index], StructureConstants]

    def member(self, k: Index) -> StructureConstants:
        return self.generator(k)

    @property
    def limit(self) -> StructureConstants:
        return self.generator(math.inf)


def gk_family() -> GroupFamily:
    return GroupFamily("gk", gk_member)


def bracket_gap(family: GroupFamily, k: Index, a: np.ndarray, b: np.ndarray) -> float:
    """``|[a, b]_k - [a, b]_inf|`` for first-layer vectors."""
    return float(
        np.linalg.norm(bracket_vec(family.member(k).c, a, b) - bracket_vec(family.limit.c, a, b))
    )


# --- distance convergence -------------------------------------------------


@dataclass
class ConvergenceTable:
    k_list: tuple
    rows: list  # (k, pair_id, d_k, d_inf, gap, status)
    max_gap: dict
    note: str = "sample certificate on the listed pairs, not a supremum over the box"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "pair_id", "d_k", "d_inf", "gap"])
        for k, pid, dk, dinf, gap, _ in self.rows:
            w.writerow([k, pid, f"{dk:.17g}", f"{dinf:.17g}", f"{gap:.17g}"])
        return buf.getvalue()

    def monotone(self, noise: float = 1e-2) -> bool:
        gaps = [self.max_gap[k] for k in self.k_list]
        return all(b <= a + noise for a, b in zip(gaps, gaps[1:]))


def seeded_pairs(count: int, n: int, seed: int, box: float = 1.0) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [
        (rng.uniform(-box, box, n), rng.uniform(-box, box, n)) for _ in range(count)
    ]


def convergence_report(
    family: GroupFamily,
    point_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    k_list: Sequence[int] = DEFAULT_K_LIST,
    *,
    seed: int = 0,
    starts: int = 32,
    inits: int = 1,
) -> ConvergenceTable:
    """Distances ``d_k`` versus the limit ``d_inf`` on fixed point pairs.

    Each cell uses both solvers and keeps the smaller value (both are
    lengths of actual horizontal paths).
    """
    k_list = tuple(k_list)
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ValueError("k_list must be increasing")

    def _dist(sc, p, q):
        m = sc.m
        est = distance(
            sc, GroupPoint.from_vec(p, m), GroupPoint.from_vec(q, m), "both",
            seed=seed, starts=starts, inits=inits,
        )
        return est.min, est.status

    limit = family.limit
    d_inf = [_dist(limit, p, q)[0] for p, q in point_pairs]
    rows, max_gap = [], {}
    for k in k_list:
        sc = family.member(k)
        worst = 0.0
        for pid, (p, q) in enumerate(point_pairs):
            dk, status = _dist(sc, p, q)
            gap = abs(dk - d_inf[pid])
            worst = max(worst, gap)
            rows.append((k, pid, dk, d_inf[pid], gap, status))
        max_gap[k] = worst
    return ConvergenceTable(k_list, rows, max_gap)


# --- semicontinuity experiment ----------------------------------------------


@dataclass
class MemberResult:
    k: Index
    status: MetivierStatus
    min_sigma: float
    n0: int
    expected_status: MetivierStatus
    expected_n0: int

    @property
    def matches(self) -> bool:
        return self.status is self.expected_status and self.n0 == self.expected_n0


@dataclass
class SemicontinuityReport:
    members: list[MemberResult]
    budget: int
    seed: int
    diagnostics: list[str] = field(default_factory=list)
    exponent_evidence: Optional[dict] = None

    @property
    def pattern_ok(self) -> bool:
        return all(r.matches for r in self.members)

    @property
    def finite_n0(self) -> int:
        return min(r.n0 for r in self.members if r.k != math.inf)

    @property
    def limit_n0(self) -> int:
        return next(r.n0 for r in self.members if r.k == math.inf)

    def render(self) -> str:
        lines = ["semicontinuity experiment for the gk family", ""]
        lines.append(f"{'k':>6}  {'verdict':<13} {'min sigma(J_u)':>15}  {'N_0':>4}  expected")
        for r in self.members:
            label = "inf" if r.k == math.inf else str(r.k)
            lines.append(
                f"{label:>6}  {r.status.value:<13} {r.min_sigma:15.6e}  {r.n0:>4}  "
                f"({r.expected_status.value}, {r.expected_n0}) {'ok' if r.matches else 'MISMATCH'}"
            )
        lines.append("")
        if not self.pattern_ok:
            lines.append("pattern check FAILED")
            lines.extend(self.diagnostics)
            return "\n".join(lines) + "\n"
        lo, hi = self.finite_n0, self.limit_n0
        lines += [
            "every finite member is Metivier, hence ideal, with N_0 = dim g1 + 3 dim g2 = "
            f"{lo};",
            f"the limit member is not Metivier and has N_0 = {hi}.",
            "",
            "if N_CE = N_0 held on every ideal group, lower semicontinuity of N_CE",
            "under structure-constant convergence would give",
            "",
            f"  {hi} = N_0(G_inf) <= N_CE(G_inf) <= liminf_k N_CE(G_k) = liminf_k N_0(G_k) = {lo}",
            "",
            f"which is false since {hi} > {lo}.  Hence some finite member G_k has",
            "N_CE > N_0, and N_0 is not lower semicontinuous along this family.",
        ]
        if self.exponent_evidence:
            lines.append("")
            lines.append("empirical contraction exponents (lower bounds for N_CE, not asserted):")
            for key, value in self.exponent_evidence.items():
                lines.append(f"  {key}: {value:.6f}")
        return "\n".join(lines) + "\n"


def semicontinuity_experiment(
    family: GroupFamily,
    budget: int = 2000,
    seed: int = 0,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    metivier_budget: int = 32,
) -> SemicontinuityReport:
    members = []
    diagnostics = []
    for k in list(k_list) + [math.inf]:
        sc = family.member(k)
        verdict = metivier_check(sc, metivier_budget, seed)
        result = n0_search(sc, budget, seed, metivier=verdict.is_metivier)
        if k == math.inf:
            expected = (MetivierStatus.NOT_METIVIER, 17)
        else:
            expected = (MetivierStatus.METIVIER, sc.m + 3 * sc.d2)
        row = MemberResult(k, verdict.status, verdict.min_sigma, result.best_value, *expected)
        if not row.matches:
            diagnostics.append(
                f"k={k}: got ({verdict.status.value}, {result.best_value}), "
                f"expected ({expected[0].value}, {expected[1]}); {verdict.certificate}; "
                f"argmax xi={result.argmax.xi.tolist()} u={result.argmax.u.tolist()}"
            )
        members.append(row)
    return SemicontinuityReport(members, budget, seed, diagnostics)
