"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 numerically inconclusive,
3 usage error.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .algebra import (
    TAU_RANK,
    GroupPoint,
    StructureConstants,
    dims,
    heisenberg,
    parse_spec_text,
    validate_spec,
)
from .deformation import (
    DEFAULT_K_LIST,
    convergence_report,
    gk_family,
    gk_member,
    seeded_pairs,
    semicontinuity_experiment,
)
from .errors import CarnotError, NumericalError, SpecError
from .filtration import n0_search
from .geodesics import QUAD_ATOL, Covector, distance, exp_map
from .jmaps import METIVIER_LOWER, SINGULAR_UPPER, j_operator, metivier_check
from .mcp import DEFAULT_S_GRID, nce_lower_bound

EXIT_OK, EXIT_INVALID, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunConfig:
    command: str
    spec: Optional[str]
    seed: int = 0
    budget: Optional[int] = None
    output: Optional[str] = None
    format: str = "text"


def resolve_group(name: str) -> tuple[Optional[StructureConstants], Optional[np.ndarray]]:
    """Builtin name or spec path -> (constructed spec, raw array).

    The raw array is returned for files so that ``validate`` can report
    antisymmetry violations; builtins return ``None`` for it.
    """
    if name == "heisenberg":
        return heisenberg(), None
    match = re.fullmatch(r"gk:(inf|\d+)", name)
    if match:
        k = math.inf if match.group(1) == "inf" else int(match.group(1))
        if k == 0:
            raise UsageError("gk:k needs k >= 1")
        return gk_member(k), None
    path = Path(name)
    if not path.exists():
        raise UsageError(f"unknown builtin or missing spec file: {name}")
    raw = parse_spec_text(path.read_text(encoding="utf-8"))
    report = validate_spec(raw)
    sc = StructureConstants(raw, name=path.stem) if report.ok else None
    return sc, raw


def parse_vector(text: str, length: int, what: str) -> np.ndarray:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"{what}: cannot parse {text!r}") from exc
    if len(values) != length:
        raise UsageError(f"{what}: expected {length} comma-separated values, got {len(values)}")
    return np.array(values)


def fmt(x: float) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "NA"
    if math.isinf(x):
        return "inf"
    return f"{x:.17g}"


def fmt_vec(v) -> str:
    return ",".join(fmt(float(x)) for x in v)


def header(cfg: RunConfig, sc: Optional[StructureConstants], extra: str = "") -> list[str]:
    lines = [
        f"# carnotlab {__version__}",
        f"# command: {cfg.command}{(' ' + extra) if extra else ''}",
    ]
    if sc is not None:
        lines.append(f"# spec: {sc.name or cfg.spec} m={sc.m} d2={sc.d2} sha256={sc.digest()}")
    elif cfg.spec:
        lines.append(f"# spec: {cfg.spec} (not a valid group)")
    lines.append(f"# seed: {cfg.seed}")
    lines.append(f"# budget: {cfg.budget if cfg.budget is not None else 'default'}")
    lines.append(
        f"# tolerances: tau_rank={TAU_RANK:g} quad_atol={QUAD_ATOL:g} "
        f"metivier_lower={METIVIER_LOWER:g} singular_upper={SINGULAR_UPPER:g}"
    )
    return lines


# --- subcommands ------------------------------------------------------------


def _need_spec(cfg: RunConfig) -> StructureConstants:
    sc, raw = resolve_group(cfg.spec)
    if sc is None:
        report = validate_spec(raw)
        raise SpecError("; ".join(report.messages))
    return sc


def cmd_validate(cfg, args):
    sc, raw = resolve_group(cfg.spec)
    report = validate_spec(raw if raw is not None else sc)
    out = header(cfg, sc)
    out.append(f"m: {report.m}")
    out.append(f"d2: {report.d2}")
    out.append(f"antisymmetric: {report.antisymmetric}")
    out.append(f"rank: {report.rank}")
    out.append(f"bracket_generating: {report.bracket_generating}")
    out.append(f"valid: {report.ok}")
    out.extend(f"message: {msg}" for msg in report.messages)
    return out, EXIT_OK if report.ok else EXIT_INVALID


def cmd_info(cfg, args):
    sc = _need_spec(cfg)
    n, Q = dims(sc)
    verdict = metivier_check(sc, cfg.budget or 32, cfg.seed)
    out = header(cfg, sc)
    out += [
        f"m: {sc.m}",
        f"d2: {sc.d2}",
        f"n: {n}",
        f"Q: {Q}",
        f"2Q-n: {2 * Q - n}",
        f"metivier: {verdict.status.value}",
        f"min_sigma: {fmt(verdict.min_sigma)}",
        f"certificate: {verdict.certificate}",
    ]
    if verdict.witness is not None:
        out.append(f"witness_u: {fmt_vec(verdict.witness)}")
    code = EXIT_INCONCLUSIVE if verdict.status.value == "Inconclusive" else EXIT_OK
    return out, code


def cmd_n0(cfg, args):
    sc = _need_spec(cfg)
    budget = cfg.budget or 2000
    verdict = metivier_check(sc, 32, cfg.seed)
    res = n0_search(sc, budget, cfg.seed, metivier=verdict.is_metivier)
    out = header(cfg, sc)
    label = "exact (Metivier: 2Q-n)" if res.exact else "lower bound"
    if cfg.format == "csv":
        out.append("n0,kind,samples,argmax_xi,argmax_u")
        out.append(
            f"{res.best_value},{label.split()[0]},{res.samples_evaluated},"
            f"\"{fmt_vec(res.argmax.xi)}\",\"{fmt_vec(res.argmax.u)}\""
        )
    else:
        out += [
            f"N0: {res.best_value}",
            f"kind: {label}",
            f"metivier: {verdict.status.value}",
            f"samples: {res.samples_evaluated}",
            f"candidates: {res.candidate_set}",
            f"argmax_xi: {fmt_vec(res.argmax.xi)}",
            f"argmax_u: {fmt_vec(res.argmax.u)}",
        ]
    return out, EXIT_OK


def cmd_jmap(cfg, args):
    sc = _need_spec(cfg)
    u = parse_vector(args.u, sc.d2, "--u")
    op = j_operator(sc, u)
    out = header(cfg, sc, f"--u {args.u}")
    out.append(f"u: {fmt_vec(u)}")
    for row in op.mat:
        out.append(("," if cfg.format == "csv" else " ").join(fmt(float(x)) for x in row))
    return out, EXIT_OK


def cmd_dist(cfg, args):
    sc = _need_spec(cfg)
    p = GroupPoint.from_vec(parse_vector(args.p, sc.n, "--p"), sc.m)
    q = GroupPoint.from_vec(parse_vector(args.q, sc.n, "--q"), sc.m)
    est = distance(sc, p, q, args.method, seed=cfg.seed, starts=cfg.budget or 32)
    out = header(cfg, sc, f"--method {args.method}")
    if cfg.format == "csv":
        out.append("method,shooting,control,shooting_residual,control_residual,relative_gap,starts,seed,status")
        out.append(
            ",".join(
                [args.method, fmt(est.shooting), fmt(est.control), fmt(est.shooting_residual),
                 fmt(est.control_residual), fmt(est.relative_gap), str(est.starts), str(cfg.seed), est.status]
            )
        )
    else:
        out.append(f"method: {args.method}")
        if est.shooting is not None or args.method != "control":
            out.append(f"shooting: {fmt(est.shooting)}")
            out.append(f"shooting_residual: {fmt(est.shooting_residual)}")
        if est.control is not None:
            out.append(f"control: {fmt(est.control)}")
            out.append(f"control_residual: {fmt(est.control_residual)}")
        if args.method == "both":
            out.append(f"relative_gap: {fmt(est.relative_gap)}")
        out.append(f"starts: {est.starts}")
        out.append(f"status: {est.status}")
    code = EXIT_OK
    if est.status != "ok" or (args.method == "shooting" and est.shooting is None):
        code = EXIT_INCONCLUSIVE
    return out, code


def cmd_exp(cfg, args):
    sc = _need_spec(cfg)
    lam = Covector.from_vec(parse_vector(args.lam, sc.n, "--lambda"), sc.m)
    point = exp_map(sc, lam, args.t)
    out = header(cfg, sc, f"--t {fmt(args.t)}")
    out.append(f"lambda: {fmt_vec(lam.vec)}")
    out.append(f"t: {fmt(args.t)}")
    out.append(f"xi: {fmt_vec(point.xi)}")
    out.append(f"u: {fmt_vec(point.u)}")
    out.append(f"length: {fmt(args.t * lam.speed)}")
    return out, EXIT_OK


def cmd_mcp(cfg, args):
    sc = _need_spec(cfg)
    grid = tuple(float(x) for x in args.s_grid.split(",")) if args.s_grid else DEFAULT_S_GRID
    rep = nce_lower_bound(sc, args.samples, grid, cfg.seed)
    out = header(cfg, sc, f"--samples {args.samples}")
    out += [
        f"# summary: nce_lower_bound={fmt(rep.value)} kept={rep.kept} excluded={rep.excluded} "
        f"discarded={rep.discarded} exclusion_rate={fmt(rep.exclusion_rate)}",
    ]
    if rep.witness is not None:
        out.append(f"# witness: lambda={fmt_vec(rep.witness.vec)} s={fmt(rep.witness_s)}")
    if cfg.format == "csv":
        out.append(rep.to_csv().rstrip("\n"))
    else:
        out.append(f"nce_lower_bound: {fmt(rep.value)}")
        out.append(f"status: {rep.status}")
    return out, EXIT_OK if rep.status == "ok" else EXIT_INCONCLUSIVE


def cmd_family(cfg, args):
    fam = gk_family()
    k_list = tuple(int(k) for k in args.k_list.split(",")) if args.k_list else DEFAULT_K_LIST
    out = header(cfg, None, args.action)
    out.insert(2, "# family: gk")
    if args.action == "converge":
        pairs = seeded_pairs(args.pairs, 7, cfg.seed)
        table = convergence_report(fam, pairs, k_list, seed=cfg.seed)
        if cfg.format == "csv":
            out.append(table.to_csv().rstrip("\n"))
        else:
            out.append(f"{'k':>4}  max|d_k - d_inf|")
            for k in table.k_list:
                out.append(f"{k:>4}  {fmt(table.max_gap[k])}")
            out.append(f"non-increasing within 1e-2: {table.monotone()}")
            out.append(f"note: {table.note}")
        return out, EXIT_OK
    report = semicontinuity_experiment(fam, cfg.budget or 2000, cfg.seed, k_list)
    out.extend(report.render().rstrip("\n").split("\n"))
    return out, EXIT_OK if report.pattern_ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carnotlab", description="Step-two Carnot group toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--budget", type=int, default=None)
    common.add_argument("--output", "-o", default=None)
    common.add_argument("--format", choices=("text", "csv"), default="text")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def group_cmd(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("spec", help="spec file or builtin: heisenberg, gk:<k>, gk:inf")
        return p

    group_cmd("validate", "check antisymmetry and the rank condition")
    group_cmd("info", "dimensions and Metivier verdict")
    group_cmd("n0", "search for the finite supremum of N(p)")
    p = group_cmd("jmap", "print the matrix of J_u")
    p.add_argument("--u", required=True)
    p = group_cmd("dist", "Carnot-Caratheodory distance")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--method", choices=("shooting", "control", "both"), default="both")
    p = group_cmd("exp", "exponential map")
    p.add_argument("--lambda", dest="lam", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p = group_cmd("mcp", "empirical lower bound for the curvature exponent")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--s-grid", default=None)
    p = sub.add_parser("family", parents=[common], help="gk family experiments")
    p.add_argument("action", choices=("converge", "semicontinuity"))
    p.add_argument("--k-list", default=None)
    p.add_argument("--pairs", type=int, default=10)
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "info": cmd_info,
    "n0": cmd_n0,
    "jmap": cmd_jmap,
    "dist": cmd_dist,
    "exp": cmd_exp,
    "mcp": cmd_mcp,
    "family": cmd_family,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    cfg = RunConfig(
        args.command, getattr(args, "spec", None), args.seed, args.budget, args.output, args.format
    )
    try:
        lines, code = COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"carnotlab: error: {exc}\n")
        return EXIT_USAGE
    except SpecError as exc:
        sys.stderr.write(f"carnotlab: invalid spec: {exc}\n")
        return EXIT_INVALID
    except NumericalError as exc:
        sys.stderr.write(f"carnotlab: numerical failure: {exc}\n")
        return EXIT_INCONCLUSIVE
    except CarnotError as exc:
        sys.stderr.write(f"carnotlab: error: {exc}\n")
        return EXIT_USAGE
    text = "\n".join(lines) + "\n"
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return code


def main() -> None:
    raise SystemExit(run())
