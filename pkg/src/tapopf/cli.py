"""Command-line entry point: ``tapopf {validate,ybus,check-derivs,pf,opf}``.

Exit codes: 0 success, 1 case file or validation error, 2 numeric failure
(divergence, non-convergence, failed derivative check), 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import __version__
from .admittance import TapState, system_at
from .case_model import CaseError, InternalModel, load_case, to_internal, validate_case
from .checks import SUITES, run_suite, section_of
from .line_flow import branch_currents
from .opf_solver import IpmOptions, OpfProblem, SolveResult, newton_power_flow, solve_opf

log = logging.getLogger("tapopf")

EXIT_OK, EXIT_DOMAIN, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64
DEG = 180.0 / math.pi


class UsageError(Exception):
    pass


class OutputMode(Enum):
    TABLE = "table"
    JSON = "json"


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    casePath: str
    seed: int = 0
    trials: int = 10
    tolerances: tuple[float, ...] = ()
    outputMode: OutputMode = OutputMode.TABLE
    format: str | None = None
    quiet: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise UsageError("--trials must be at least 1")
        if any(not (t > 0) for t in self.tolerances):
            raise UsageError("tolerances must be positive")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    # defaults are suppressed so the flags work before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--format", choices=("json", "mpc"), default=argparse.SUPPRESS,
                   help="input format (default: from the file extension)")
    p.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                   help="suppress the human-readable report and warnings")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tapopf", parents=[common],
                     description="AC power flow and tap-adjusting OPF with analytic derivatives.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="parse and validate a case file")
    p.add_argument("case")

    p = sub.add_parser("ybus", parents=[common], help="print Ybus triplets")
    p.add_argument("case")
    p.add_argument("--tau", action="append", default=[], metavar="K=V", type=_key_value,
                   help="tap ratio of branch K (1-based row in the case file)")
    p.add_argument("--theta", action="append", default=[], metavar="K=V", type=_key_value,
                   help="phase shift of branch K in degrees")

    p = sub.add_parser("check-derivs", parents=[common], help="finite-difference derivative suites")
    p.add_argument("case")
    p.add_argument("--trials", type=int, default=10, help="random points per suite (default 10)")

    p = sub.add_parser("pf", parents=[common], help="Newton power flow")
    p.add_argument("case")

    p = sub.add_parser("opf", parents=[common], help="interior point OPF with adjustable taps")
    p.add_argument("case")
    p.add_argument("--max-iter", type=int, default=IpmOptions.max_iter)
    p.add_argument("--tol", type=float, default=None,
                   help="feasibility and complementarity tolerance (default 1e-8)")
    p.add_argument("--fixed-taps", action="store_true", help="hold adjustable taps at their case values")
    return parser


def _emit(doc: dict):
    print(json.dumps(doc, indent=2, sort_keys=False, allow_nan=False))


def _clean(v):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _load(cfg: CliConfig):
    case = load_case(cfg.casePath, cfg.format)
    if not cfg.quiet:
        for w in case.warnings:
            log.warning("%s: %s", cfg.casePath, w)
    return case


def _key_value(spec: str) -> tuple[int, float]:
    try:
        key, val = spec.split("=", 1)
        return int(key), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K=V, got {spec!r}") from None


def _branch_selector(m: InternalModel, spec: tuple[int, float], what: str) -> tuple[int, float]:
    row, value = spec
    hit = np.flatnonzero(m.branch_rows == row - 1)
    if len(hit) == 0:
        raise UsageError(f"--{what}: no in-service branch at row {row}")
    return int(hit[0]), value


# ------------------------------------------------------------------ subcommands

def cmd_validate(cfg: CliConfig) -> int:
    rep = validate_case(_load(cfg))
    if cfg.outputMode is OutputMode.JSON:
        _emit({"case": cfg.casePath, "valid": rep.ok,
               "issues": [{"code": i.code, "message": i.message} for i in rep]})
    elif not cfg.quiet:
        for issue in rep:
            print(issue)
    return EXIT_OK if rep.ok else EXIT_DOMAIN


def cmd_ybus(cfg: CliConfig, args) -> int:
    m = to_internal(_load(cfg))
    tau, theta = m.tau0.copy(), m.theta0.copy()
    for spec in args.tau:
        k, v = _branch_selector(m, spec, "tau")
        if not v > 0:
            raise UsageError("--tau values must be positive")
        tau[k] = v
    for spec in args.theta:
        k, v = _branch_selector(m, spec, "theta")
        theta[k] = v / DEG
    Y = system_at(m, TapState(tau, theta))[1].Ybus.tocoo()
    order = np.lexsort((Y.col, Y.row))
    ids = m.bus_ids
    rows = [(int(ids[Y.row[i]]), int(ids[Y.col[i]]), Y.data[i].real, Y.data[i].imag) for i in order]
    if cfg.outputMode is OutputMode.JSON:
        _emit({"case": cfg.casePath,
               "ybus": [[r, c, float(f"{re:.12g}"), float(f"{im:.12g}")] for r, c, re, im in rows]})
    elif not cfg.quiet:
        for r, c, re, im in rows:
            print(f"{r} {c} {re:.12g} {im:.12g}")
    return EXIT_OK


def cmd_check_derivs(cfg: CliConfig) -> int:
    m = to_internal(_load(cfg))
    results = [run_suite(name, cfg.seed, cfg.trials, model=m) for name in SUITES]
    sections: dict[str, list] = {}
    for res in results:
        for r in res.reports:
            sections.setdefault(section_of(r), []).append(r)
    ok = all(res.passed for res in results)
    if cfg.outputMode is OutputMode.JSON:
        _emit(_clean({"case": cfg.casePath, "seed": cfg.seed, "trials": cfg.trials, "pass": ok,
                      "sections": {k: [r.to_dict() for r in v] for k, v in sections.items()}}))
    elif not cfg.quiet:
        width = max(len(r.blockName) for v in sections.values() for r in v)
        for name, reports in sections.items():
            print(f"[{name}]")
            for r in reports:
                print(f"  {r.blockName:<{width}}  {r.maxRelErr:10.3e}  {r.maxAbsErr:10.3e}  "
                      f"{'pass' if r.passed else 'FAIL'}")
        print("all blocks within tolerance" if ok else "derivative check FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


def _solution(m: InternalModel, res: SolveResult) -> dict:
    x = res.x
    tau, theta = x.full_taps(m)
    sys_ = system_at(m, TapState(tau, theta))[1]
    If, It = branch_currents(x.V, sys_)
    base = m.baseMVA
    adj = set(m.adj.tolist())
    branches = []
    for k in range(m.nl):
        limit = m.Imax[k]
        binding = []
        if limit > 0:
            if abs(If[k]) >= limit * (1 - 1e-6):
                binding.append("If")
            if abs(It[k]) >= limit * (1 - 1e-6):
                binding.append("It")
        if k in adj:
            if abs(tau[k] - m.tau_min[k]) <= 1e-6 or abs(tau[k] - m.tau_max[k]) <= 1e-6:
                if m.tau_min[k] < m.tau_max[k]:
                    binding.append("tau")
        branches.append({
            "row": int(m.branch_rows[k]) + 1,
            "fbus": int(m.bus_ids[m.f[k]]), "tbus": int(m.bus_ids[m.t[k]]),
            "tau": float(tau[k]), "theta": float(theta[k] * DEG),
            "If": float(abs(If[k])), "It": float(abs(It[k])), "Imax": float(limit),
            "binding": binding,
        })
    return {
        "status": res.status.value,
        "iterations": res.iterations,
        "objective": res.objective,
        "message": res.message,
        "bus": [{"id": int(i), "Vm": float(vm), "Va": float(va * DEG)}
                for i, vm, va in zip(m.bus_ids, x.Vm, x.Va)],
        "gen": [{"bus": int(m.bus_ids[b]), "Pg": float(p * base), "Qg": float(q * base)}
                for b, p, q in zip(m.gen_bus, x.Pg, x.Qg)],
        "branch": branches,
    }


def _print_solution(doc: dict, title: str):
    print(f"{title}: {doc['status']} after {doc['iterations']} iteration(s), objective {doc['objective']:.6f}")
    print("\nbus        Vm (pu)    Va (deg)")
    for b in doc["bus"]:
        print(f"{b['id']:<6} {b['Vm']:11.6f} {b['Va']:11.5f}")
    print("\ngen bus    Pg (MW)  Qg (MVAr)")
    for g in doc["gen"]:
        print(f"{g['bus']:<6} {g['Pg']:11.4f} {g['Qg']:10.4f}")
    print("\nrow  from   to       tau  theta (deg)     |If|     |It|     Imax  binding")
    for br in doc["branch"]:
        lim = f"{br['Imax']:8.4f}" if br["Imax"] > 0 else "       -"
        mark = ",".join(br["binding"]) if br["binding"] else ""
        print(f"{br['row']:<4} {br['fbus']:<6} {br['tbus']:<6} {br['tau']:7.4f} {br['theta']:12.4f} "
              f"{br['If']:8.4f} {br['It']:8.4f} {lim}  {mark}")


def cmd_pf(cfg: CliConfig) -> int:
    m = to_internal(_load(cfg))
    res = newton_power_flow(m)
    doc = _solution(m, res)
    doc["mismatch"] = res.feasibility
    if cfg.outputMode is OutputMode.JSON:
        _emit(_clean({"case": cfg.casePath, **doc}))
    elif not cfg.quiet:
        _print_solution(doc, "power flow")
        print(f"\nmax mismatch {res.feasibility:.3e}")
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_opf(cfg: CliConfig, args) -> int:
    m = to_internal(_load(cfg))
    if args.max_iter < 1:
        raise UsageError("--max-iter must be at least 1")
    opts = IpmOptions(max_iter=args.max_iter)
    if args.tol is not None:
        opts.feas_tol = opts.comp_tol = args.tol
    res = solve_opf(OpfProblem.build(m, fixed_taps=args.fixed_taps), opts)
    doc = _solution(m, res)
    doc.update(feasibility=res.feasibility, optimality=res.optimality, complementarity=res.complementarity)
    if cfg.outputMode is OutputMode.JSON:
        _emit(_clean({"case": cfg.casePath, **doc}))
    elif not cfg.quiet:
        _print_solution(doc, "opf")
    return EXIT_OK if res.converged else EXIT_NUMERIC


# ------------------------------------------------------------------ dispatch

def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if not args.subcommand:
            raise UsageError("a subcommand is required (validate, ybus, check-derivs, pf, opf)")
        tols = tuple(t for t in (getattr(args, "tol", None),) if t is not None)
        cfg = CliConfig(
            subcommand=args.subcommand, casePath=args.case,
            seed=getattr(args, "seed", 0), trials=getattr(args, "trials", 10),
            tolerances=tols,
            outputMode=OutputMode.JSON if getattr(args, "json", False) else OutputMode.TABLE,
            format=getattr(args, "format", None), quiet=getattr(args, "quiet", False))
    except UsageError as e:
        print(f"tapopf: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if cfg.quiet else logging.WARNING,
                        format="tapopf: %(levelname)s: %(message)s")
    try:
        if cfg.subcommand == "validate":
            return cmd_validate(cfg)
        if cfg.subcommand == "ybus":
            return cmd_ybus(cfg, args)
        if cfg.subcommand == "check-derivs":
            return cmd_check_derivs(cfg)
        if cfg.subcommand == "pf":
            return cmd_pf(cfg)
        return cmd_opf(cfg, args)
    except UsageError as e:
        print(f"tapopf: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseError, OSError) as e:
        print(f"tapopf: {cfg.casePath}: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"tapopf: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
