"""Command-line entry point: ``fomatch synth|run|ratio|verify|gen``.

Exit codes: 0 success, 1 usage, 2 parse error, 3 verification failure,
4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import analysis, suites
from .dualfuncs import TableFormatError, save_balanced, save_ewf, synthesize_balanced, synthesize_ewf
from .engine import (OfferTable, compute_offer_tables, run_balanced_ranking, run_eager_waterfilling,
                     run_ranking, run_waterfilling)
from .instance import InstanceParseError, generate_random, generate_upper_triangular, read, write
from .lp import LpIterationLimit, LpStatus

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_VERIFY, EXIT_INTERNAL = 0, 1, 2, 3, 4
ALGORITHMS = ("ranking", "balanced", "waterfilling", "ewf")

log = logging.getLogger("fomatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- output


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float printed to 17 significant digits."""
    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, (float, np.floating)):
            o = float(o)
            if not math.isfinite(o):
                return json.dumps(str(o))
            return f"{o:.17g}"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if len(o) == 0:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")
    return enc(obj, 0) + "\n"


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([f"{r[k]:.17g}" if isinstance(r[k], float) else r[k] for k in keys])
    return buf.getvalue()


def emit(args, report: dict, rows: list[dict] | None = None) -> None:
    report = dict(report)
    report["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    if args.format == "csv":
        text = to_csv(rows if rows is not None else [{k: v for k, v in report.items()
                                                      if not isinstance(v, (dict, list))}])
    else:
        text = dumps(report)
    if args.out and args.command not in ("synth", "gen"):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    out = Path(args.out or suites.tables_dir())
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "balanced":
        funcs, sol = synthesize_balanced(args.n, coarse=args.coarse)
    else:
        funcs, sol = synthesize_ewf(args.n, coarse=args.coarse)
    cert = {"kind": args.kind, "n": args.n, "status": sol.status.value,
            "objective": sol.objective_value, "max_violation": sol.max_violation,
            "solve_stats": sol.stats}
    if sol.status is not LpStatus.OPTIMAL:
        sys.stderr.write(f"LP returned {sol.status.value}\n")
        sys.stdout.write(dumps(cert))
        return EXIT_VERIFY
    cert["gamma"] = funcs.gamma
    (save_balanced if args.kind == "balanced" else save_ewf)(funcs, out)
    (out / f"certificate_{args.kind}.json").write_text(dumps(cert))
    sys.stdout.write(dumps(cert))
    return EXIT_OK if sol.max_violation <= 1e-6 else EXIT_VERIFY


def _instance_from_args(args):
    if args.instance:
        return read(args.instance)
    if args.family == "upper-triangular":
        return generate_upper_triangular(args.n)
    return generate_random(args.n, args.edge_prob, args.bipartite, args.seed)


def _split_f(args):
    return suites.default_ewf(args.tables).f


def cmd_gen(args) -> int:
    inst = _instance_from_args(args)
    if args.out:
        write(args.out, inst)
    else:
        from .instance import to_json
        sys.stdout.write(to_json(inst))
    return EXIT_OK


def cmd_run(args) -> int:
    inst = _instance_from_args(args)
    report = {"algorithm": args.algo, "n": inst.n, "edges": inst.num_edges, "seed": args.seed}
    trace = None
    if args.algo in ("waterfilling", "ewf"):
        run = (run_eager_waterfilling if args.algo == "ewf" else run_waterfilling)(inst, _split_f(args))
        report.update(primal=run.value, dual_total=run.dual_total, alpha=list(run.alpha),
                      water=list(run.water), x_edge=[[u, v, x] for (u, v), x in sorted(run.x_edge.items())])
        trace = [{"active": s.active, "passive": list(s.passive), "amount": s.amount,
                  "level_start": s.level_start, "level_end": s.level_end,
                  "step": "arrival" if s.eager else "deadline"} for s in run.trace]
    else:
        funcs = suites.default_balanced(args.tables)
        ranks = np.random.default_rng(args.seed).random(inst.n)
        if args.algo == "ranking":
            run = run_ranking(inst, ranks)
        else:
            tab = _offer_tables(args, inst, funcs)
            run = run_balanced_ranking(inst, funcs, tab, ranks)
        report.update(primal=float(run.size), dual_total=math.fsum(run.alpha), ranks=list(ranks),
                      alpha=list(run.alpha), matching=[list(e) for e in run.matching()])
        trace = [{"event": t, "active": u, "passive": v, "alpha_active": run.alpha[u],
                  "alpha_passive": run.alpha[v]} for t, u, v in run.decisions]
    if args.trace:
        Path(args.trace).write_text(dumps({"algorithm": args.algo, "events": trace}))
    emit(args, report)
    return EXIT_OK


def _offer_tables(args, inst, funcs):
    if getattr(args, "offers", None):
        return OfferTable.read(args.offers)
    return compute_offer_tables(inst, funcs, args.epsilon, args.samples, args.seed)


def cmd_ratio(args) -> int:
    if args.instance or args.family == "upper-triangular":
        insts = [_instance_from_args(args)]
    else:
        insts = [generate_random(args.n, args.edge_prob, args.bipartite, args.seed + i) for i in range(args.count)]
    funcs = suites.default_balanced(args.tables) if args.algo in ("ranking", "balanced") else None
    f = _split_f(args) if args.algo in ("waterfilling", "ewf") else None
    rows = []
    for i, inst in enumerate(insts):
        tab = _offer_tables(args, inst, funcs) if args.algo == "balanced" else None
        r = analysis.competitive_ratio(inst, args.algo, funcs=funcs, tables=tab, f=f,
                                       trials=args.trials, seed=args.seed + i)
        rows.append({"instance": i, "algorithm": r.algorithm, "algo_value": r.algo_value,
                     "opt_value": r.opt_value, "ratio": r.ratio, "stderr": r.stderr,
                     "opt_kind": r.opt_kind, "flagged": r.flagged})
    report = {"algorithm": args.algo, "trials": args.trials, "seed": args.seed,
              "reference": {"omega": analysis.OMEGA, "waterfilling": analysis.WATERFILLING_RATIO},
              "min_ratio": min(r["ratio"] for r in rows), "instances": rows}
    emit(args, report, rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = suites.SUITES if "all" in args.suite else args.suite
    results = []
    funcs = suites.default_balanced(args.tables)
    fn = suites.default_ewf(args.tables)
    count = args.count
    for name in names:
        if name == "lp":
            results.append(suites.lp_tables(funcs, fn))
        elif name == "continuous":
            results.append(suites.continuous(funcs, fn, args.samples_continuous, args.seed))
        elif name == "interpolation":
            results.append(suites.interpolation(funcs, fn, seed=args.seed))
        elif name == "ewf-feasibility":
            results.append(suites.ewf_feasibility(fn, count or 1000, seed=args.seed, jobs=args.jobs))
        elif name == "balanced-feasibility":
            results.append(suites.balanced_feasibility(funcs, count or 50, epsilon=args.epsilon,
                                                       samples=args.samples, trials=args.trials or 100_000,
                                                       seed=args.seed, jobs=args.jobs))
        elif name == "degeneration":
            results.append(suites.degeneration(count or 10_000, seed=args.seed, funcs=funcs))
        elif name == "alternating-path":
            results.append(suites.alternating_path(funcs, count or 1000, seed=args.seed, epsilon=args.epsilon))
        elif name == "structure":
            results.append(suites.structure(funcs, count or 500, seed=args.seed, epsilon=args.epsilon))
        elif name == "binding":
            results.append(suites.binding(funcs, count or 100, trials=args.trials or 2000, seed=args.seed,
                                          epsilon=args.epsilon))
        elif name == "oracle":
            results.append(suites.oracle(count or 500, seed=args.seed))
        elif name == "constants":
            results.append(suites.constants())
    for r in results:
        sys.stderr.write(r.line() + "\n")
    report = {"seed": args.seed, "passed": all(r.passed for r in results),
              "suites": [{"name": r.name, "passed": r.passed, "details": r.details} for r in results]}
    rows = [{"suite": r.name, "passed": r.passed} for r in results]
    emit(args, report, rows)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=None)
    common.add_argument("--epsilon", type=float, default=0.03)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default=None)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--tables", default=None, help="function-table directory (default: $FOMATCH_TABLES or shipped)")
    common.add_argument("-v", "--verbose", action="store_true")

    source = _Parser(add_help=False)
    source.add_argument("--instance", default=None, help="instance JSON file")
    source.add_argument("--family", choices=("random", "upper-triangular"), default="random")
    source.add_argument("--n", type=int, default=10)
    source.add_argument("--edge-prob", type=float, default=0.3)
    source.add_argument("--bipartite", action="store_true")

    p = _Parser(prog="fomatch", description="Fully online matching: algorithms, dual functions, checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="solve a factor-revealing LP and write tables")
    s.add_argument("kind", choices=("balanced", "ewf"))
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--coarse", type=int, default=None, help="warm-start from a coarser grid")

    g = sub.add_parser("gen", parents=[common, source], help="generate an instance")
    del g

    r = sub.add_parser("run", parents=[common, source], help="run one algorithm on one instance")
    r.add_argument("--algo", choices=ALGORITHMS, required=True)
    r.add_argument("--trace", default=None)
    r.add_argument("--samples", type=int, default=20_000, help="Monte-Carlo samples for offer tables")
    r.add_argument("--offers", default=None, help="offer-table CSV to use instead of computing one")

    q = sub.add_parser("ratio", parents=[common, source], help="competitive-ratio estimates")
    q.add_argument("--algo", choices=ALGORITHMS, required=True)
    q.add_argument("--count", type=int, default=1)
    q.add_argument("--samples", type=int, default=20_000)
    q.add_argument("--offers", default=None)

    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", nargs="+", choices=suites.SUITES + ("all",), default=["all"])
    v.add_argument("--count", type=int, default=None, help="instances/trials per suite (suite default if unset)")
    v.add_argument("--samples", type=int, default=20_000)
    v.add_argument("--samples-continuous", type=int, default=100_000)
    return p


COMMANDS = {"synth": cmd_synth, "gen": cmd_gen, "run": cmd_run, "ratio": cmd_ratio, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"fomatch: error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", None) is None and args.command == "ratio":
        args.trials = 10_000
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        sys.stderr.write(f"fomatch: error: {e}\n")
        return EXIT_USAGE
    except (InstanceParseError, TableFormatError, FileNotFoundError) as e:
        sys.stderr.write(f"fomatch: {e}\n")
        return EXIT_PARSE
    except ValueError as e:
        # argument values rejected by a library precondition
        sys.stderr.write(f"fomatch: error: {e}\n")
        return EXIT_USAGE
    except LpIterationLimit as e:
        sys.stderr.write(f"fomatch: {e}\n")
        return EXIT_VERIFY
    except Exception:  # pragma: no cover - reported, not hidden
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
