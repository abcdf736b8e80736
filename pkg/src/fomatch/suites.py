"""Seeded verification suites shared by the CLI and the acceptance tests."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .dualfuncs import (BALANCED_GAMMA, EWF_GAMMA, BalancedFunctions, EwfFunction, big_h_interpolation_gap,
                        build_balanced_lp, build_ewf_lp, integral_interpolation_gap, load_balanced, load_ewf,
                        verify_continuous, verify_ewf_continuous)
from .engine import (OfferTable, compute_offer_tables, run_balanced_ranking, run_eager_waterfilling,
                     run_ranking)
from .instance import generate_random, generate_upper_triangular
from .lp import verify
from .oracle import fractional_opt, max_matching_bipartite

DATA_DIR = Path(__file__).parent / "data"


def tables_dir(override=None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get("FOMATCH_TABLES") or DATA_DIR)


def default_balanced(directory=None) -> BalancedFunctions:
    return load_balanced(tables_dir(directory))


def default_ewf(directory=None) -> EwfFunction:
    return load_ewf(tables_dir(directory))


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: " + ", ".join(
            f"{k}={_fmt(v)}" for k, v in self.details.items())


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def pmap(fn, items, jobs: int = 1):
    """Ordered map, in worker processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _timed(fn):
    def wrapper(*a, **k):
        t0 = time.perf_counter()
        res = fn(*a, **k)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_general(seed: int, max_n: int):
    rng = np.random.default_rng([seed, 1])
    n = int(rng.integers(1, max_n + 1))
    return generate_random(n, float(rng.uniform(0.05, 0.5)), False, seed)


def random_bipartite(seed: int, max_n: int, min_n: int = 2):
    rng = np.random.default_rng([seed, 2])
    n = int(rng.integers(min_n, max_n + 1))
    return generate_random(n, float(rng.uniform(0.2, 0.8)), True, seed)


# ---------------------------------------------------------------- LP tables


@_timed
def lp_tables(funcs: BalancedFunctions, fn: EwfFunction, tol: float = 1e-6) -> SuiteResult:
    """Re-check stored tables against every row of their LPs."""
    lp_b = build_balanced_lp(funcs.n)
    lay = lp_b.layout
    x = np.zeros(lp_b.num_vars)
    x[lay.F], x[lay.G], x[lay.L], x[lay.R] = funcs.f.values, funcs.g.values, funcs.ell.values, funcs.gamma
    vb = verify(lp_b, x)
    lp_e = build_ewf_lp(fn.h.n)
    y = np.zeros(lp_e.num_vars)
    y[lp_e.layout.H], y[lp_e.layout.R] = fn.h.values, fn.gamma
    ve = verify(lp_e, y)
    return SuiteResult("lp-tables", vb <= tol and ve <= tol,
                       {"balanced_violation": vb, "ewf_violation": ve,
                        "balanced_gamma": funcs.gamma, "ewf_gamma": fn.gamma})


# ---------------------------------------------------------------- continuous


@_timed
def continuous(funcs: BalancedFunctions, fn: EwfFunction, samples: int = 100_000, seed: int = 0,
               floor: float = -1e-9) -> SuiteResult:
    rb = verify_continuous(funcs, samples, seed)
    re = verify_ewf_continuous(fn, samples, seed)
    d = {f"{k}": v["min_margin"] for r in (rb, re) for k, v in r.items() if isinstance(v, dict)}
    d["samples"] = samples
    return SuiteResult("continuous", min(rb["min_margin"], re["min_margin"]) >= floor, d)


@_timed
def interpolation(funcs: BalancedFunctions, fn: EwfFunction, points: int = 1000, seed: int = 0) -> SuiteResult:
    """Integral gaps in ``[-1/(8n^2), 0]``; ``H`` gaps in ``[-3/(4n^2), 0)``."""
    rng = np.random.default_rng(seed)
    d = {}
    ok = True
    for name, pl in (("f", funcs.f), ("g", funcs.g)):
        n = pl.n
        t = rng.random(points)
        gap = integral_interpolation_gap(pl, t)
        lo = -1 / (8 * n * n)
        ok &= bool(np.all(gap >= lo - 1e-15) and np.all(gap <= 1e-15))
        d[f"int_{name}_min"], d[f"int_{name}_max"] = float(gap.min()), float(gap.max())
    n = fn.h.n
    q = rng.random(points)
    q = q[np.abs(q * n - np.round(q * n)) > 1e-9]
    gap = big_h_interpolation_gap(fn.h, q)
    ok &= bool(np.all(gap >= -3 / (4 * n * n) - 1e-15) and np.all(gap < 0))
    d["H_min"], d["H_max"] = float(gap.min()), float(gap.max())
    return SuiteResult("interpolation", ok, d)


# ---------------------------------------------------------------- EWF


def _ewf_one(args):
    inst, f, gamma = args
    run = run_eager_waterfilling(inst, f)
    worst = min((run.alpha[u] + run.alpha[v] for u, v in inst.edges), default=math.inf)
    return worst - gamma, abs(run.dual_total - run.value), float(run.water.max(initial=0.0))


@_timed
def ewf_feasibility(fn: EwfFunction, count: int = 1000, max_n: int = 50, tri_max: int = 40,
                    seed: int = 0, gamma: float | None = None, jobs: int = 1) -> SuiteResult:
    """Exact per-edge dual feasibility of Eager Water-filling."""
    gamma = fn.gamma if gamma is None else gamma
    f = fn.f
    insts = [random_general(seed + i, max_n) for i in range(count)]
    insts += [generate_upper_triangular(n) for n in range(1, tri_max + 1)]
    res = pmap(_ewf_one, [(g, f, gamma) for g in insts], jobs)
    margin = min(r[0] for r in res)
    mismatch = max(r[1] for r in res)
    water = max(r[2] for r in res)
    ok = margin >= -1e-6 and mismatch <= 1e-9 and water <= 1.0
    return SuiteResult("ewf-feasibility", ok, {"instances": len(insts), "min_margin": margin,
                                               "max_dual_gap": mismatch, "max_water": water, "gamma": gamma})


# ---------------------------------------------------------------- Balanced Ranking


def _balanced_one(args):
    inst, funcs, eps, samples, trials, seed, gamma = args
    tab = compute_offer_tables(inst, funcs, eps, samples, seed)
    rep = analysis.dual_feasibility_report(inst, "balanced", funcs=funcs, tables=tab, gamma=gamma,
                                           trials=trials, seed=seed + 1)
    worst = min(rep.edges, key=lambda e: e.margin, default=None)
    return (rep.min_margin, worst.stderr if worst else 0.0, abs(rep.dual_total - rep.primal_value))


@_timed
def balanced_feasibility(funcs: BalancedFunctions, count: int = 50, max_n: int = 10, epsilon: float = 0.03,
                         samples: int = 20_000, trials: int = 100_000, seed: int = 0,
                         gamma: float | None = None, tolerance: float = 0.01, jobs: int = 1) -> SuiteResult:
    """Monte-Carlo per-edge ``E[alpha_u] + E[alpha_v]`` for Balanced Ranking."""
    gamma = funcs.gamma if gamma is None else gamma
    insts = [random_bipartite(seed + i, max_n) for i in range(count)]
    res = pmap(_balanced_one, [(g, funcs, epsilon, samples, trials, 1000 * (seed + i), gamma)
                               for i, g in enumerate(insts)], jobs)
    margin = min(r[0] for r in res)
    se = max(r[1] for r in res)
    gap = max(r[2] for r in res)
    return SuiteResult("balanced-feasibility", margin >= -tolerance and gap <= 1e-9,
                       {"instances": count, "min_mean_margin": margin, "max_stderr": se, "gamma": gamma,
                        "trials": trials, "epsilon": epsilon})


@_timed
def degeneration(pairs: int = 10_000, max_n: int = 10, seed: int = 0, funcs: BalancedFunctions | None = None) -> SuiteResult:
    """Balanced Ranking with zero tables makes Ranking's decisions, event for event."""
    g = funcs.g if funcs is not None else analysis.default_g

    class _G:
        pass

    holder = _G()
    holder.g = g
    rng = np.random.default_rng(seed)
    mism = 0
    per = 20
    for i in range(pairs // per):
        inst = random_bipartite(seed + i, max_n, 1) if i % 2 else random_general(seed + i, max_n)
        zero = OfferTable.zeros(inst)
        for _ in range(per):
            ranks = rng.random(inst.n)
            a = run_ranking(inst, ranks, g)
            b = run_balanced_ranking(inst, holder, zero, ranks)
            mism += a.decisions != b.decisions
    return SuiteResult("degeneration", mism == 0, {"pairs": pairs // per * per, "mismatches": mism})


# ---------------------------------------------------------------- structure


def _tables_for(inst, funcs, eps, samples, seed):
    return compute_offer_tables(inst, funcs, eps, samples, seed) if inst.edges else OfferTable({}, eps, samples, seed)


@_timed
def alternating_path(funcs: BalancedFunctions, trials: int = 1000, max_n: int = 8, seed: int = 0,
                     epsilon: float = 0.03, samples: int = 2000, per_instance: int = 10) -> SuiteResult:
    rng = np.random.default_rng(seed)
    done = fails = skipped = 0
    i = 0
    first = None
    while done < trials:
        inst = random_bipartite(seed + i, max_n)
        i += 1
        if not inst.edges:
            continue
        pol = analysis.policy(funcs, _tables_for(inst, funcs, epsilon, samples, seed + i))
        for _ in range(per_instance):
            ranks = rng.random(inst.n)
            matched = [u for u in range(inst.n) if pol.run(inst, ranks).partner[u] >= 0]
            if not matched:
                skipped += 1
                continue
            u = matched[int(rng.integers(len(matched)))]
            v = analysis.check_alternating_path(inst, ranks, u, pol)
            done += 1
            if not v.ok:
                fails += 1
                first = first or v.reasons[0]
            if done >= trials:
                break
    d = {"trials": done, "failures": fails}
    if first:
        d["first_failure"] = first
    return SuiteResult("alternating-path", fails == 0, d)


@_timed
def structure(funcs: BalancedFunctions, instances: int = 500, n: int = 6, resolution: int = 64, seed: int = 0,
              epsilon: float = 0.03, samples: int = 2000) -> SuiteResult:
    """Region checks on one random edge per instance plus marginal-rank consistency."""
    rng = np.random.default_rng(seed)
    checked = viol = anomalies = 0
    i = 0
    first = None
    while checked < instances:
        inst = generate_random(n, float(rng.uniform(0.3, 0.8)), True, seed + i)
        i += 1
        if not inst.edges:
            continue
        pol = analysis.policy(funcs, _tables_for(inst, funcs, epsilon, samples, seed + i))
        a, b = inst.edges[int(rng.integers(len(inst.edges)))]
        u, v = (a, b) if inst.deadline_first(a, b) else (b, a)
        mr, vs = analysis.check_structure(inst, u, v, rng.random(inst.n), pol, resolution)
        checked += 1
        viol += len(vs)
        anomalies += not mr.threshold_ok
        if vs and first is None:
            first = f"{vs[0].rule} at ({vs[0].y_u:.4f},{vs[0].y_v:.4f})"
    d = {"instances": checked, "violations": viol, "threshold_anomalies": anomalies}
    if first:
        d["first_violation"] = first
    return SuiteResult("structure", viol == 0 and anomalies == 0, d)


@_timed
def binding(funcs: BalancedFunctions, edges: int = 100, n: int = 6, trials: int = 2000, seed: int = 0,
            epsilon: float = 0.03, samples: int = 2000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    checked = fails = 0
    worst = -math.inf
    i = 0
    while checked < edges:
        inst = generate_random(n, float(rng.uniform(0.3, 0.8)), True, seed + i)
        i += 1
        if not inst.edges:
            continue
        pol = analysis.policy(funcs, _tables_for(inst, funcs, epsilon, samples, seed + i))
        a, b = inst.edges[int(rng.integers(len(inst.edges)))]
        u, v = (a, b) if inst.deadline_first(a, b) else (b, a)
        r = analysis.check_binding(inst, u, v, pol, trials, seed + i)
        checked += 1
        fails += not r.passed
        if r.stderr > 0:
            worst = max(worst, r.margin / r.stderr)
    return SuiteResult("binding", fails == 0, {"edges": checked, "failures": fails, "max_z": worst,
                                               "trials": trials})


# ---------------------------------------------------------------- oracle


@_timed
def oracle(count: int = 500, max_n: int = 12, seed: int = 0) -> SuiteResult:
    from .instance import from_edges
    worst = 0.0
    for i in range(count):
        inst = random_bipartite(seed + i, max_n, 1)
        worst = max(worst, abs(fractional_opt(inst).value - max_matching_bipartite(inst).value))
    k3 = fractional_opt(from_edges(3, [(0, 1), (1, 2), (0, 2)])).value
    return SuiteResult("oracle", worst <= 1e-9 and abs(k3 - 1.5) <= 1e-9,
                       {"instances": count, "max_gap": worst, "triangle": k3})


@_timed
def constants() -> SuiteResult:
    w = analysis.omega_constant()
    ok = abs(w - 0.5671432904) <= 1e-8 and abs(w * math.exp(w) - 1) <= 1e-12
    ok &= abs(analysis.WATERFILLING_RATIO - 0.5857864376) <= 1e-10
    return SuiteResult("constants", ok, {"omega": w, "waterfilling": analysis.WATERFILLING_RATIO})


SUITES = ("lp", "continuous", "interpolation", "ewf-feasibility", "balanced-feasibility", "degeneration",
          "alternating-path", "structure", "binding", "oracle", "constants")

__all__ = ["SUITES", "SuiteResult", "BALANCED_GAMMA", "EWF_GAMMA", "default_balanced", "default_ewf",
           "tables_dir"]
