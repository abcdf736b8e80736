"""Empirical checks of structural properties and dual-feasibility reports.

Offer tables are treated as constants of the instance: runs on an instance
with a vertex removed reuse the full instance's tables (relabelled).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dualfuncs import BalancedFunctions, big_f, big_g
from .engine import (ACTIVE, PASSIVE, OfferTable, default_g, run_balanced_ranking,
                     run_eager_waterfilling, run_ranking, run_waterfilling, simulate_batch)
from .instance import Instance, remove_vertex
from .oracle import fractional_opt, max_matching_bipartite

GRID = 1024
BISECT_TOL = 1e-6
CHUNK_ROWS = 1 << 17


def omega_constant(tol: float = 1e-15) -> float:
    """Root of ``w e^w = 1`` by Newton iteration."""
    w = 0.5
    for _ in range(100):
        e = math.exp(w)
        step = (w * e - 1) / (e * (w + 1))
        w -= step
        if abs(step) < tol:
            break
    return w


OMEGA = omega_constant()
WATERFILLING_RATIO = 2 - math.sqrt(2)


# ---------------------------------------------------------------- plumbing


@dataclass(frozen=True)
class Policy:
    """A Ranking-style rule: ``g`` plus optional offer tables (``None`` means plain Ranking)."""

    g: object
    tables: OfferTable | None = None

    def restricted(self, remap: dict[int, int]) -> "Policy":
        if self.tables is None:
            return self
        t = self.tables
        entries = {(remap[a], remap[b]): fh for (a, b), fh in t.entries.items() if a in remap and b in remap}
        return Policy(self.g, OfferTable(entries, t.epsilon, t.samples, t.seed))

    def gy(self, ranks) -> np.ndarray:
        return np.asarray(self.g(np.asarray(ranks, dtype=float)), dtype=float)

    def run(self, inst: Instance, ranks, stop=None):
        if self.tables is None:
            return run_ranking(inst, ranks, self.g, stop)
        return run_balanced_ranking(inst, _GOnly(self.g), self.tables, ranks, stop)


class _GOnly:
    def __init__(self, g):
        self.g = g


def policy(funcs: BalancedFunctions | None = None, tables: OfferTable | None = None) -> Policy:
    return Policy(funcs.g if funcs is not None else default_g, tables)


def _stop_without(inst: Instance, removed: int, deadline_of: int) -> int:
    """Last event index up to ``deadline_of``'s deadline once ``removed`` is deleted."""
    t = inst.deadline_time(deadline_of)
    return sum(1 for i in range(t + 1) if inst.timeline[i][1] != removed) - 1


def _passive_rows(inst: Instance, pol: Policy, gy: np.ndarray, w: int, stop: int) -> np.ndarray:
    out = np.empty(gy.shape[0], dtype=bool)
    for a in range(0, gy.shape[0], CHUNK_ROWS):
        run = simulate_batch(inst, gy[a:a + CHUNK_ROWS], pol.tables, stop)
        out[a:a + CHUNK_ROWS] = run.role[:, w] == PASSIVE
    return out


@dataclass
class MarginalScan:
    value: np.ndarray           # marginal rank per row
    threshold_ok: np.ndarray    # passive set was a down-set on the grid


def marginal_ranks_batch(inst: Instance, w: int, ranks: np.ndarray, pol: Policy,
                         stop: int | None = None, grid: int = GRID, tol: float = BISECT_TOL) -> MarginalScan:
    """Marginal rank of ``w`` for each row of ``ranks`` (column ``w`` ignored).

    Grid scan at half-offset points, then bisection at the last passive
    grid point. A passive set that is not a down-set is flagged per row.
    """
    ranks = np.atleast_2d(np.asarray(ranks, dtype=float))
    T = ranks.shape[0]
    if stop is None:
        stop = len(inst.timeline) - 1
    if not inst.neighbors(w) or stop < 0:
        return MarginalScan(np.zeros(T), np.ones(T, dtype=bool))
    base = pol.gy(ranks)
    ys = (np.arange(grid) + 0.5) / grid
    g_ys = pol.gy(ys)
    per_chunk = max(1, CHUNK_ROWS // grid)
    passive = np.empty((T, grid), dtype=bool)
    for a in range(0, T, per_chunk):
        blk = base[a:a + per_chunk]
        gy = np.repeat(blk, grid, axis=0)
        gy[:, w] = np.tile(g_ys, blk.shape[0])
        passive[a:a + per_chunk] = _passive_rows(inst, pol, gy, w, stop).reshape(-1, grid)
    any_p = passive.any(axis=1)
    last = np.where(any_p, grid - 1 - np.argmax(passive[:, ::-1], axis=1), -1)
    below = np.arange(grid)[None, :] <= last[:, None]
    threshold_ok = ~np.any(below & ~passive, axis=1)
    lo = np.where(any_p, ys[np.maximum(last, 0)], 0.0)
    hi = np.where(last + 1 < grid, ys[np.minimum(last + 1, grid - 1)], 1.0)
    active = any_p.copy()
    top = any_p & (last == grid - 1)
    if top.any():
        gy = base[top].copy()
        gy[:, w] = pol.gy(1.0)
        at_one = _passive_rows(inst, pol, gy, w, stop)
        idx = np.flatnonzero(top)
        lo[idx[at_one]] = 1.0
        hi[idx[at_one]] = 1.0
        active[idx[at_one]] = False
    while True:
        todo = active & (hi - lo > tol)
        if not todo.any():
            break
        mid = (lo[todo] + hi[todo]) / 2
        gy = base[todo].copy()
        gy[:, w] = pol.gy(mid)
        p = _passive_rows(inst, pol, gy, w, stop)
        idx = np.flatnonzero(todo)
        lo[idx[p]] = mid[p]
        hi[idx[~p]] = mid[~p]
    value = np.where(any_p, (lo + hi) / 2, 0.0)
    value = np.where(any_p & (hi == 1.0) & (lo == 1.0), 1.0, value)
    return MarginalScan(value, threshold_ok)


def marginal_rank(inst: Instance, u: int, ranks, pol: Policy, stop: int | None = None) -> float:
    """``sup{y_u : u passive}`` with the other ranks fixed; 0 if ``u`` is never passive."""
    return float(marginal_ranks_batch(inst, u, np.asarray(ranks, dtype=float)[None, :], pol, stop).value[0])


# ---------------------------------------------------------------- tau, gamma, theta


@dataclass
class MarginalRanks:
    tau: float
    gamma: float
    theta: float
    theta_samples: list[float]
    consistent: bool
    threshold_ok: bool

    @property
    def degenerate(self) -> bool:
        return self.theta >= 1.0


def _check_edge(inst: Instance, u: int, v: int) -> None:
    if v not in inst.neighbors(u):
        raise ValueError(f"({u},{v}) is not an edge")
    if not inst.deadline_first(u, v):
        raise ValueError(f"vertex {u}'s deadline must precede vertex {v}'s")


def marginal_triples(inst: Instance, u: int, v: int, ranks: np.ndarray, pol: Policy,
                     theta_tol: float = 1e-3) -> tuple[np.ndarray, ...]:
    """Vectorised ``(tau, gamma, theta)`` for every row of ``ranks``.

    Returns ``tau, gamma, theta, consistent, threshold_ok, theta_samples``. ``theta`` is taken
    at ``y_u = (tau + 1) / 2`` and compared with two more ranks above ``tau``.
    """
    _check_edge(inst, u, v)
    ranks = np.atleast_2d(np.asarray(ranks, dtype=float))
    stop = inst.deadline_time(u)
    g_mv, map_v = remove_vertex(inst, v)
    g_mu, map_u = remove_vertex(inst, u)
    keep_v = [w for w in range(inst.n) if w != v]
    keep_u = [w for w in range(inst.n) if w != u]
    s_tau = marginal_ranks_batch(g_mv, map_v[u], ranks[:, keep_v], pol.restricted(map_v),
                                 _stop_without(inst, v, u))
    s_gam = marginal_ranks_batch(g_mu, map_u[v], ranks[:, keep_u], pol.restricted(map_u),
                                 _stop_without(inst, u, u))
    tau, gam = s_tau.value, s_gam.value
    thetas = []
    ok = s_tau.threshold_ok & s_gam.threshold_ok
    for frac in (0.5, 0.25, 0.75):
        r = ranks.copy()
        r[:, u] = np.minimum(tau + frac * (1 - tau), np.nextafter(1.0, 0.0))
        s = marginal_ranks_batch(inst, v, r, pol, stop)
        thetas.append(s.value)
        ok &= s.threshold_ok
    theta = np.where(tau >= 1.0, 1.0, thetas[0])
    spread = np.max(thetas, axis=0) - np.min(thetas, axis=0)
    consistent = (spread <= theta_tol) | (tau >= 1.0)
    return tau, gam, theta, consistent, ok, np.stack(thetas, axis=1)


def compute_tau_gamma_theta(inst: Instance, u: int, v: int, ranks, pol: Policy) -> MarginalRanks:
    tau, gam, theta, cons, ok, samples = marginal_triples(inst, u, v, np.asarray(ranks, dtype=float)[None, :], pol)
    return MarginalRanks(float(tau[0]), float(gam[0]), float(theta[0]), [float(s) for s in samples[0]],
                         bool(cons[0]), bool(ok[0]))


# ---------------------------------------------------------------- structure


@dataclass
class Violation:
    rule: str
    y_u: float
    y_v: float
    detail: str = ""


def check_structure(inst: Instance, u: int, v: int, ranks, pol: Policy, resolution: int = 64,
                    margin: float = 4 * BISECT_TOL) -> tuple[MarginalRanks, list[Violation]]:
    """Compare a half-offset ``(y_u, y_v)`` grid of outcomes with the predicted regions.

    Points within ``margin`` of a computed marginal rank are skipped since
    the ranks themselves are only known to bisection accuracy.
    """
    mr = compute_tau_gamma_theta(inst, u, v, ranks, pol)
    out: list[Violation] = []
    if not mr.consistent:
        out.append(Violation("theta-constant", math.nan, math.nan, f"samples {mr.theta_samples}"))
    if mr.theta < mr.gamma - margin:
        out.append(Violation("theta>=gamma", math.nan, math.nan, f"theta={mr.theta} gamma={mr.gamma}"))
    ys = (np.arange(resolution) + 0.5) / resolution
    yu, yv = np.meshgrid(ys, ys, indexing="ij")
    yu, yv = yu.ravel(), yv.ravel()
    r = np.tile(np.asarray(ranks, dtype=float), (yu.size, 1))
    r[:, u], r[:, v] = yu, yv
    gy = pol.gy(r)
    run = simulate_batch(inst, gy, pol.tables, inst.deadline_time(u))
    role_u, role_v = run.role[:, u], run.role[:, v]
    alpha_u = run.alpha[:, u]
    fh = pol.tables.get(u, v) if pol.tables is not None else 0.0
    offer_at_theta = 1.0 - float(pol.gy(min(mr.theta, 1.0))) - fh
    tau, gam, theta = mr.tau, mr.gamma, mr.theta

    def far(y, x):
        return np.abs(y - x) > margin

    clear = far(yu, tau) & far(yv, gam) & far(yv, theta)
    above_tau = (yu > tau) & clear

    def flag(mask, rule, detail=""):
        for k in np.flatnonzero(mask):
            out.append(Violation(rule, float(yu[k]), float(yv[k]), detail))

    flag((yu < tau) & clear & (role_u != PASSIVE), "u passive below tau")
    flag((yv < gam) & clear & (role_v != PASSIVE), "v passive below gamma")
    matched_v = role_v != 0
    flag(above_tau & (matched_v != (yv < theta)), "v matched iff y_v < theta")
    flag(above_tau & (yv > gam) & (yv < theta) & ~((role_u == ACTIVE) & (run.partner[:, u] == v)),
         "u actively matches v")
    if theta < 1.0:
        flag(above_tau & (yv > theta) & (alpha_u < offer_at_theta - margin), "alpha_u beyond theta",
             f"bound {offer_at_theta}")
        flag(above_tau & (yv < gam) & (role_u == 0), "u matched below gamma")
        flag(above_tau & (yv < gam) & (role_u == ACTIVE) & (alpha_u < offer_at_theta - margin),
             "active alpha_u below gamma", f"bound {offer_at_theta}")
    return mr, out


# ---------------------------------------------------------------- alternating path


@dataclass
class PathVerdict:
    ok: bool
    path: list[int]
    reasons: list[str] = field(default_factory=list)


def _status(inst: Instance, run, w: int, pol: Policy, gy: np.ndarray, time_of):
    """Sortable status: passive > active > unmatched, refined by the tie rules."""
    p = int(run.partner[w])
    if p < 0:
        return (0, 0.0)
    if run.role[w] == PASSIVE:
        return (2, -time_of(p))
    fh = pol.tables.get(w, p) if pol.tables is not None else 0.0
    return (1, 1.0 - gy[p] - fh)


def check_alternating_path(inst: Instance, ranks, u: int, pol: Policy) -> PathVerdict:
    """Removing matched ``u`` changes the matching along one alternating path from ``u``
    and leaves no neighbour of ``u`` better off."""
    ranks = np.asarray(ranks, dtype=float)
    full = pol.run(inst, ranks)
    if full.partner[u] < 0:
        raise ValueError(f"vertex {u} is unmatched")
    sub, remap = remove_vertex(inst, u)
    inv = {b: a for a, b in remap.items()}
    keep = [w for w in range(inst.n) if w != u]
    pol_sub = pol.restricted(remap)
    red = pol_sub.run(sub, ranks[keep])
    m1 = set(full.matching())
    m2 = {(min(inv[a], inv[b]), max(inv[a], inv[b])) for a, b in red.matching()}
    diff = m1 ^ m2
    reasons = []
    adj: dict[int, list[int]] = {}
    for a, b in diff:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    path = [u]
    prev = None
    cur = u
    while True:
        nxt = [w for w in adj.get(cur, []) if w != prev]
        if len(nxt) > 1 or (cur != u and len(adj[cur]) > 2):
            reasons.append(f"branching at vertex {cur}")
            break
        if not nxt:
            break
        prev, cur = cur, nxt[0]
        if cur in path:
            reasons.append("cycle in symmetric difference")
            break
        path.append(cur)
    if len(path) - 1 != len(diff):
        reasons.append("symmetric difference is not a single path from u")
    for i in range(len(path) - 1):
        e = (min(path[i], path[i + 1]), max(path[i], path[i + 1]))
        want = m1 if i % 2 == 0 else m2
        if e not in want:
            reasons.append(f"edge {e} breaks alternation")
    gy_full = pol.gy(ranks)
    gy_sub = gy_full[keep]
    for w in inst.neighbors(u):
        before = _status(inst, full, w, pol, gy_full, inst.deadline_time)
        after = _status(sub, red, remap[w], pol_sub, gy_sub, sub.deadline_time)
        if after[0] == 2 and before[0] == 2:
            after = (2, -inst.deadline_time(inv[int(red.partner[remap[w]])]))
        if after > before:
            reasons.append(f"neighbour {w} improved: {before} -> {after}")
    return PathVerdict(not reasons, path, reasons)


# ---------------------------------------------------------------- binding


@dataclass
class BindingResult:
    mean_tau: float
    x_u_estimate: float
    margin: float
    stderr: float
    passed: bool


def check_binding(inst: Instance, u: int, v: int, pol: Policy, trials: int = 2000,
                  seed: int = 0) -> BindingResult:
    """Compare ``E[tau]`` with an independent estimate of ``Pr[u passive]``."""
    _check_edge(inst, u, v)
    rng = np.random.default_rng(seed)
    ranks = rng.random((trials, inst.n))
    g_mv, map_v = remove_vertex(inst, v)
    keep = [w for w in range(inst.n) if w != v]
    tau = marginal_ranks_batch(g_mv, map_v[u], ranks[:, keep], pol.restricted(map_v),
                               _stop_without(inst, v, u)).value
    indep = rng.random((trials, inst.n))
    run = simulate_batch(inst, pol.gy(indep), pol.tables)
    pas = (run.role[:, u] == PASSIVE).astype(float)
    mt, xu = float(tau.mean()), float(pas.mean())
    se = math.sqrt(tau.var(ddof=1) / trials + pas.var(ddof=1) / trials) if trials > 1 else math.inf
    margin = mt - xu
    return BindingResult(mt, xu, margin, se, margin <= 3 * se)


# ---------------------------------------------------------------- gain bound


@dataclass
class GainCheck:
    mean_alpha_sum: float
    bound: float
    stderr: float
    slack: float
    passed: bool


def check_gain_bound(inst: Instance, u: int, v: int, funcs: BalancedFunctions, pol: Policy,
                     trials: int = 2000, seed: int = 0) -> GainCheck:
    """``E[alpha_u + alpha_v] >= E[G(tau, gamma, theta)] + F(x_u, x_v^(u))`` up to sampling error.

    ``f(x_v^(u))`` is replaced by the table's estimate, so the table accuracy
    ``epsilon`` is allowed on top of three standard errors.
    """
    _check_edge(inst, u, v)
    rng = np.random.default_rng(seed)
    ranks = rng.random((trials, inst.n))
    tau, gam, theta, *_ = marginal_triples(inst, u, v, ranks, pol)
    gvals = big_g(funcs, tau, gam, np.maximum(theta, gam))
    run = simulate_batch(inst, pol.gy(rng.random((trials, inst.n))), pol.tables)
    a = run.alpha[:, u] + run.alpha[:, v]
    x_u = float((run.role[:, u] == PASSIVE).mean())
    passive_v = (run.role[:, v] == PASSIVE) & (run.match_time[:, v] <= inst.deadline_time(u))
    x_vu = float(passive_v.mean())
    bound = float(gvals.mean()) + float(big_f(funcs, x_u, x_vu))
    se = math.sqrt(a.var(ddof=1) / trials + gvals.var(ddof=1) / trials)
    eps = pol.tables.epsilon if pol.tables is not None else 0.0
    diff = float(a.mean()) - bound
    return GainCheck(float(a.mean()), bound, se, eps, diff >= -3 * se - eps)


# ---------------------------------------------------------------- reports


@dataclass
class EdgeStat:
    u: int
    v: int
    value: float
    stderr: float
    margin: float


@dataclass
class FeasibilityReport:
    algorithm: str
    gamma: float
    trials: int
    seed: int
    edges: list[EdgeStat]
    dual_total: float
    primal_value: float

    @property
    def min_margin(self) -> float:
        return min((e.margin for e in self.edges), default=math.inf)

    def to_json(self) -> str:
        d = asdict(self)
        d["min_margin"] = self.min_margin
        return json.dumps(d, indent=2, default=_num)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "v", "value", "stderr", "margin"])
        for e in self.edges:
            w.writerow([e.u, e.v, f"{e.value:.17g}", f"{e.stderr:.17g}", f"{e.margin:.17g}"])
        return buf.getvalue()


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


RANDOMIZED = ("ranking", "balanced")
FRACTIONAL = ("waterfilling", "ewf")


def dual_feasibility_report(inst: Instance, algorithm: str, *, funcs=None, tables: OfferTable | None = None,
                            f=None, gamma: float | None = None, trials: int = 10_000, seed: int = 0,
                            chunk: int = 20_000) -> FeasibilityReport:
    """Per-edge ``alpha_u + alpha_v``: exact for the fractional rules, Monte-Carlo means otherwise."""
    if algorithm in FRACTIONAL:
        if f is None:
            raise ValueError(f"{algorithm} needs the split function f")
        run = (run_eager_waterfilling if algorithm == "ewf" else run_waterfilling)(inst, f)
        gam = gamma if gamma is not None else (funcs.gamma if funcs is not None else WATERFILLING_RATIO)
        edges = [EdgeStat(u, v, float(run.alpha[u] + run.alpha[v]), 0.0,
                          float(run.alpha[u] + run.alpha[v] - gam)) for u, v in inst.edges]
        return FeasibilityReport(algorithm, gam, 0, seed, edges, run.dual_total, run.value)
    if algorithm not in RANDOMIZED:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "balanced" and tables is None:
        raise ValueError("balanced ranking needs offer tables")
    pol = Policy(funcs.g if funcs is not None else default_g, tables if algorithm == "balanced" else None)
    gam = gamma if gamma is not None else (funcs.gamma if (funcs is not None and algorithm == "balanced") else OMEGA)
    rng = np.random.default_rng(seed)
    m = inst.num_edges
    us = np.array([e[0] for e in inst.edges], dtype=np.int64)
    vs = np.array([e[1] for e in inst.edges], dtype=np.int64)
    s1 = np.zeros(m)
    s2 = np.zeros(m)
    tot_alpha = 0.0
    tot_size = 0.0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        run = simulate_batch(inst, pol.gy(rng.random((k, inst.n))), pol.tables)
        pair = run.alpha[:, us] + run.alpha[:, vs]
        s1 += pair.sum(axis=0)
        s2 += (pair ** 2).sum(axis=0)
        tot_alpha += float(run.alpha.sum())
        tot_size += float((run.role == ACTIVE).sum())
        done += k
    mean = s1 / trials
    var = np.maximum(s2 / trials - mean ** 2, 0.0) * trials / max(trials - 1, 1)
    se = np.sqrt(var / trials)
    edges = [EdgeStat(int(us[i]), int(vs[i]), float(mean[i]), float(se[i]), float(mean[i] - gam))
             for i in range(m)]
    return FeasibilityReport(algorithm, gam, trials, seed, edges, tot_alpha / trials, tot_size / trials)


@dataclass
class RatioReport:
    algorithm: str
    algo_value: float
    opt_value: float
    ratio: float
    stderr: float
    trials: int
    seed: int
    flagged: bool
    opt_kind: str


def competitive_ratio(inst: Instance, algorithm: str, *, funcs=None, tables: OfferTable | None = None,
                      f=None, trials: int = 10_000, seed: int = 0, chunk: int = 20_000) -> RatioReport:
    """Algorithm value over the offline optimum; an empty optimum reports ratio 1 and is flagged."""
    integral = algorithm in RANDOMIZED
    if integral and (inst.bipartition is not None):
        opt = max_matching_bipartite(inst)
    else:
        opt = fractional_opt(inst)
    if algorithm in FRACTIONAL:
        if f is None:
            raise ValueError(f"{algorithm} needs the split function f")
        run = (run_eager_waterfilling if algorithm == "ewf" else run_waterfilling)(inst, f)
        val, se, n_trials = run.value, 0.0, 0
    elif algorithm in RANDOMIZED:
        if algorithm == "balanced" and tables is None:
            raise ValueError("balanced ranking needs offer tables")
        pol = Policy(funcs.g if funcs is not None else default_g, tables if algorithm == "balanced" else None)
        rng = np.random.default_rng(seed)
        sizes = []
        done = 0
        while done < trials:
            k = min(chunk, trials - done)
            run = simulate_batch(inst, pol.gy(rng.random((k, inst.n))), pol.tables)
            sizes.append((run.role == ACTIVE).sum(axis=1))
            done += k
        sz = np.concatenate(sizes).astype(float)
        val = float(sz.mean())
        se = float(sz.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
        n_trials = trials
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if opt.value == 0:
        return RatioReport(algorithm, val, 0.0, 1.0, 0.0, n_trials, seed, True, opt.kind)
    return RatioReport(algorithm, val, opt.value, val / opt.value, se / opt.value, n_trials, seed, False, opt.kind)
