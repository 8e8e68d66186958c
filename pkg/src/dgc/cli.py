"""Command-line interface: ``dgc validate|solve|verify|example``.

Exit codes: 0 success, 1 validation or verification failure, 2 unreadable or
mismatched input, 3 LCP not solved, 4 solved but residual checks failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import lcp as lcp_mod
from .game_model import SpecError, feasibility_probe, load_spec, save_spec, validate_game
from .riccati import dump_riccati_csv, solve_riccati_E, solve_riccati_P

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_LCP = 3
EXIT_VERIFY = 4

logger = logging.getLogger("dgc")

LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


@dataclass
class RunConfig:
    command: str
    spec: str | None = None
    outdir: str | None = None
    tol_piv: float = lcp_mod.TOL_PIV
    tol_comp: float = lcp_mod.TOL_COMP
    tol_feas: float = lcp_mod.TOL_FEAS
    max_pivots: int | None = None
    probes: int = 20
    seed: int = 0
    probe_bounded: bool = False
    dump_riccati: bool = False
    kernel: str | None = None
    fallback: bool = True
    family_tol: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tol_piv", "tol_comp", "tol_feas"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_pivots is not None and self.max_pivots < 1:
            raise ValueError("max_pivots must be >= 1")
        if any(not v > 0 for v in self.family_tol.values()):
            raise ValueError("family tolerances must be positive")

    def settings(self) -> dict:
        d = asdict(self)
        for k in ("command", "spec", "outdir"):
            d.pop(k)
        return d


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("DGC_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(path: str):
    try:
        return load_spec(path)
    except (SpecError, OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot load {path}: {exc}", file=sys.stderr)
        return None


def _table(rows, head=("check", "result", "detail")) -> str:
    w = [max(len(str(r[c])) for r in list(rows) + [head]) for c in range(len(head))]
    lines = ["  ".join(str(h).ljust(w[c]) for c, h in enumerate(head))]
    lines += ["  ".join(str(v).ljust(w[c]) for c, v in enumerate(r)) for r in rows]
    return "\n".join(lines)


def cmd_validate(cfg: RunConfig) -> int:
    g = _load(cfg.spec)
    if g is None:
        return EXIT_INPUT
    rep = validate_game(g)
    feas = feasibility_probe(g, check_bounded=cfg.probe_bounded)
    rep.boundedness = feas.boundedness
    rows = rep.rows()
    rows.append(("feasible set nonempty", feas.status, feas.message or "-"))
    re = solve_riccati_E(g)
    rp = solve_riccati_P(g)
    rows.append(("Y_k^i invertible", "pass" if re.ok else "FAIL",
                 f"min eig {re.min_eig_Y:.3g}"))
    rows.append(("Y_k^i positive definite", "pass" if re.positive_definite else "FAIL", "-"))
    rows.append(("Lambda_k invertible", "pass" if rp.ok else "FAIL",
                 f"max cond {np.max(rp.condition_number):.3g}"))
    print(f"spec {g.name}: N={g.N} K={g.K} n={g.n} m={g.dims.m} c={g.dims.c}")
    print(_table(rows))
    ok = rep.ok and feas.feasible
    return EXIT_OK if ok else EXIT_FAIL


def _solve_and_archive(g, cfg: RunConfig, outdir: Path):
    from .pipeline import GateFailed, LcpUnsolved, solve_golne, spec_hash, \
        write_solution_archive
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.dump_riccati:
        dump_riccati_csv(solve_riccati_E(g), solve_riccati_P(g), outdir / "riccati")
    try:
        res = solve_golne(g, tol_piv=cfg.tol_piv, max_pivots=cfg.max_pivots,
                          tol_comp=cfg.tol_comp, tol_feas=cfg.tol_feas, kernel=cfg.kernel,
                          fallback=cfg.fallback, probes=cfg.probes, seed=cfg.seed,
                          tolerances=cfg.family_tol)
    except GateFailed as exc:
        print(f"solvability check failed: {exc}", file=sys.stderr)
        return None, EXIT_FAIL
    except LcpUnsolved as exc:
        path = outdir / "lcp_replay.txt"
        lcp_mod.dump_lcp(exc.instance, path,
                         comment=f"spec {g.name} sha256 {spec_hash(g)}\nstatus {exc.status}")
        print(f"LCP not solved ({exc.status}); replay written to {path}", file=sys.stderr)
        return None, EXIT_LCP
    write_solution_archive(g, res, outdir, settings=cfg.settings())
    print(f"LCP d={res.diagnostics['lcp_dim']} {res.lcp_status} via "
          f"{res.diagnostics['lcp_method']} ({res.lcp_pivots} iterations)")
    print("costs: " + ", ".join(f"J{i + 1} = {v:.10g}" for i, v in enumerate(res.costs)))
    print(res.report.to_text())
    return res, (EXIT_OK if res.report.ok else EXIT_VERIFY)


def cmd_solve(cfg: RunConfig) -> int:
    g = _load(cfg.spec)
    if g is None:
        return EXIT_INPUT
    _, code = _solve_and_archive(g, cfg, Path(cfg.outdir or "."))
    return code


def cmd_verify(cfg: RunConfig, solution: str) -> int:
    from .pipeline import ArchiveMismatch, load_solution_archive
    from .verify import verify_result
    g = _load(cfg.spec)
    if g is None:
        return EXIT_INPUT
    try:
        res = load_solution_archive(g, solution)
    except (ArchiveMismatch, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rep = verify_result(g, res, probes=cfg.probes, seed=cfg.seed, tolerances=cfg.family_tol)
    print(rep.to_text())
    if not rep.ok:
        print("failed families: " + ", ".join(rep.failed), file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_example(cfg: RunConfig, name: str, emit: str) -> int:
    from .examples import build_netflow_spec, postprocess_netflow
    if name != "netflow":
        print(f"error: unknown example {name!r}", file=sys.stderr)
        return EXIT_INPUT
    outdir = Path(cfg.outdir or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    g = build_netflow_spec()
    if emit == "spec":
        path = outdir / "netflow.json"
        save_spec(g, path)
        print(f"wrote {path}")
        return EXIT_OK
    res, code = _solve_and_archive(g, cfg, outdir)
    if res is not None:
        rep = postprocess_netflow(g, res.u, res.x)
        (outdir / "netflow_report.json").write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
        print(f"transmission stops: relay 1 at k={rep.stop_stage[0]}, "
              f"relay 2 at k={rep.stop_stage[1]}")
    return code


def _family_tol(items):
    out = {}
    for it in items or []:
        key, _, val = it.partition("=")
        out[key] = float(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def solve_opts(p):
        p.add_argument("-o", "--outdir", default=".")
        p.add_argument("--tol-piv", type=float, default=lcp_mod.TOL_PIV)
        p.add_argument("--tol-comp", type=float, default=lcp_mod.TOL_COMP)
        p.add_argument("--tol-feas", type=float, default=lcp_mod.TOL_FEAS)
        p.add_argument("--max-pivots", type=int, default=None)
        p.add_argument("--kernel", choices=sorted(lcp_mod.KERNELS), default=None)
        p.add_argument("--no-fallback", action="store_true",
                       help="report Lemke failures instead of trying the Newton fallback")
        p.add_argument("--dump-riccati", action="store_true")

    def check_opts(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--probes", type=int, default=20)
        p.add_argument("--family-tol", action="append", metavar="NAME=TOL",
                       help="override one verification family tolerance")

    p = sub.add_parser("validate", help="check solvability assumptions of a spec")
    p.add_argument("spec")
    p.add_argument("--probe-bounded", action="store_true")

    p = sub.add_parser("solve", help="compute an equilibrium and write a solution archive")
    p.add_argument("spec")
    solve_opts(p)
    check_opts(p)
    p.add_argument("--probe-bounded", action="store_true")

    p = sub.add_parser("verify", help="re-run residual checks on a stored solution")
    p.add_argument("spec")
    p.add_argument("solution")
    check_opts(p)

    p = sub.add_parser("example", help="built-in example games")
    p.add_argument("name", choices=["netflow"])
    p.add_argument("--emit", choices=["spec", "solve"], required=True)
    solve_opts(p)
    check_opts(p)
    return ap


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(
            command=args.command, spec=getattr(args, "spec", None),
            outdir=getattr(args, "outdir", None),
            tol_piv=getattr(args, "tol_piv", lcp_mod.TOL_PIV),
            tol_comp=getattr(args, "tol_comp", lcp_mod.TOL_COMP),
            tol_feas=getattr(args, "tol_feas", lcp_mod.TOL_FEAS),
            max_pivots=getattr(args, "max_pivots", None),
            probes=getattr(args, "probes", 20), seed=getattr(args, "seed", 0),
            probe_bounded=getattr(args, "probe_bounded", False),
            dump_riccati=getattr(args, "dump_riccati", False),
            kernel=getattr(args, "kernel", None),
            fallback=not getattr(args, "no_fallback", False),
            family_tol=_family_tol(getattr(args, "family_tol", None)))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "validate":
        return cmd_validate(cfg)
    if args.command == "solve":
        return cmd_solve(cfg)
    if args.command == "verify":
        return cmd_verify(cfg, args.solution)
    return cmd_example(cfg, args.name, args.emit)


if __name__ == "__main__":
    sys.exit(main())
