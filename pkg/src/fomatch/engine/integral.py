"""Ranking and Balanced Ranking, single runs and Monte-Carlo batches."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dualfuncs import TableFormatError
from ..instance import ARRIVAL, Instance
from . import kernels

UNMATCHED, ACTIVE, PASSIVE = 0, 1, 2


def default_g(y):
    """Ranking's default split ``g(y) = e^{y-1}``."""
    return np.exp(np.asarray(y, dtype=float) - 1.0)


class OfferTableError(RuntimeError):
    pass


@dataclass
class OfferTable:
    """``f_hat(u, v)`` for each deadline vertex ``u`` and each neighbour ``v`` it may pick."""

    entries: dict[tuple[int, int], float]
    epsilon: float
    samples: int
    seed: int
    lookahead: dict[tuple[int, int], float] = field(default_factory=dict, compare=False)

    def get(self, u: int, v: int) -> float:
        try:
            return self.entries[u, v]
        except KeyError:
            raise OfferTableError(f"no offer entry for deadline vertex {u} and neighbour {v}") from None

    @classmethod
    def zeros(cls, inst: Instance) -> "OfferTable":
        """``f == 0`` for every ordered neighbour pair; Balanced Ranking then reduces to Ranking."""
        entries = {(u, v): 0.0 for u in range(inst.n) for v in inst.neighbors(u)}
        return cls(entries, 0.0, 0, 0)

    def write(self, path) -> None:
        lines = [f"# epsilon={self.epsilon:.17g} samples={self.samples} seed={self.seed}", "u,v,f_hat"]
        lines += [f"{u},{v},{fh:.17g}" for (u, v), fh in sorted(self.entries.items())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "OfferTable":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise TableFormatError(f"{path}:1: missing header")
        try:
            meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
            eps, samples, seed = float(meta["epsilon"]), int(meta["samples"]), int(meta["seed"])
        except (KeyError, ValueError):
            raise TableFormatError(f"{path}:1: header needs epsilon, samples and seed") from None
        entries = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip() or line.startswith("u,"):
                continue
            parts = line.split(",")
            try:
                entries[int(parts[0]), int(parts[1])] = float(parts[2])
            except (IndexError, ValueError):
                raise TableFormatError(f"{path}:{lineno}: expected u,v,f_hat") from None
        return cls(entries, eps, samples, seed)


@dataclass
class IntegralRun:
    partner: np.ndarray
    role: np.ndarray
    alpha: np.ndarray
    match_time: np.ndarray
    decisions: list[tuple[int, int, int]]   # (event index, active, passive)

    @property
    def size(self) -> int:
        return len(self.decisions)

    def matching(self) -> list[tuple[int, int]]:
        return [(min(u, v), max(u, v)) for _, u, v in self.decisions]


def _empty_run(n: int) -> IntegralRun:
    return IntegralRun(np.full(n, -1), np.zeros(n, dtype=np.int8), np.zeros(n),
                       np.full(n, -1), [])


def _candidates(inst: Instance, u: int, t: int, partner, expired) -> list[int]:
    # arrival is guaranteed by the model; checked anyway
    return [v for v in inst.neighbors(u)
            if partner[v] < 0 and not expired[v] and inst.arrival_time(v) < t]


def run_ranking(inst: Instance, ranks, g=default_g, stop: int | None = None) -> IntegralRun:
    """Each unmatched vertex, at its deadline, takes the unmatched neighbour of lowest ``g(rank)``."""
    ranks = np.asarray(ranks, dtype=float)
    gy = np.asarray(g(ranks), dtype=float)
    run = _empty_run(inst.n)
    expired = np.zeros(inst.n, dtype=bool)
    for t, (kind, u) in enumerate(inst.timeline):
        if stop is not None and t > stop:
            break
        if kind == ARRIVAL:
            continue
        if run.partner[u] < 0:
            best = None
            for v in _candidates(inst, u, t, run.partner, expired):
                if best is None or gy[v] < gy[best]:
                    best = v
            if best is not None:
                _record(run, t, u, best, 1.0 - gy[best], gy[best])
        expired[u] = True
    return run


def run_balanced_ranking(inst: Instance, funcs, tables: OfferTable, ranks,
                         stop: int | None = None) -> IntegralRun:
    """Pick the neighbour maximising ``1 - g(y_v) - f_hat(u, v)``; ties go to the smaller id."""
    ranks = np.asarray(ranks, dtype=float)
    gy = np.asarray(funcs.g(ranks), dtype=float)
    run = _empty_run(inst.n)
    expired = np.zeros(inst.n, dtype=bool)
    for t, (kind, u) in enumerate(inst.timeline):
        if stop is not None and t > stop:
            break
        if kind == ARRIVAL:
            continue
        if run.partner[u] < 0:
            best, best_score, best_fh = None, -math.inf, 0.0
            for v in _candidates(inst, u, t, run.partner, expired):
                fh = tables.get(u, v)
                score = 1.0 - gy[v] - fh
                if score > best_score:
                    best, best_score, best_fh = v, score, fh
            if best is not None:
                _record(run, t, u, best, best_score, gy[best] + best_fh)
        expired[u] = True
    return run


def _record(run: IntegralRun, t: int, u: int, v: int, alpha_u: float, alpha_v: float) -> None:
    run.partner[u], run.partner[v] = v, u
    run.role[u], run.role[v] = ACTIVE, PASSIVE
    run.alpha[u], run.alpha[v] = alpha_u, alpha_v
    run.match_time[u] = run.match_time[v] = t
    run.decisions.append((t, u, v))


# ---------------------------------------------------------------- batches


@dataclass
class BatchRun:
    """Outcome of many rank samples run in lockstep; arrays are ``(samples, n)``."""

    partner: np.ndarray
    role: np.ndarray
    alpha: np.ndarray
    match_time: np.ndarray


def _slot_offers(inst: Instance, tables: OfferTable | None):
    indptr = np.zeros(inst.n + 1, dtype=np.int64)
    for u in range(inst.n):
        indptr[u + 1] = indptr[u] + len(inst.neighbors(u))
    indices = np.array([v for u in range(inst.n) for v in inst.neighbors(u)], dtype=np.int32)
    offer = np.zeros(indices.size)
    if tables is not None:
        for u in range(inst.n):
            for k in range(indptr[u], indptr[u + 1]):
                offer[k] = tables.entries.get((u, int(indices[k])), math.nan)
    return indptr, indices, offer


def _timeline_arrays(inst: Instance):
    kind = np.array([0 if k == ARRIVAL else 1 for k, _ in inst.timeline], dtype=np.int8)
    vert = np.array([v for _, v in inst.timeline], dtype=np.int32)
    return kind, vert


def simulate_batch(inst: Instance, gy: np.ndarray, tables: OfferTable | None = None,
                   stop: int | None = None, backend: str | None = None) -> BatchRun:
    """Run Ranking (``tables=None``) or Balanced Ranking on every row of ``gy = g(ranks)``."""
    gy = np.ascontiguousarray(gy, dtype=float)
    if gy.ndim != 2 or gy.shape[1] != inst.n:
        raise ValueError("gy must have shape (samples, n)")
    kind, vert = _timeline_arrays(inst)
    indptr, indices, offer = _slot_offers(inst, tables)
    T = len(kind) - 1 if stop is None else min(stop, len(kind) - 1)
    partner, role, alpha, mtime = kernels.get(backend).simulate(kind, vert, indptr, indices, offer, gy, T)
    return BatchRun(partner, role, alpha, mtime)


# ---------------------------------------------------------------- offer tables


def compute_offer_tables(inst: Instance, funcs, epsilon: float = 0.03, samples: int = 20_000,
                         seed: int = 0, max_rounds: int | None = None) -> OfferTable:
    """Certified estimates of ``f(x_v^{(u)})`` built deadline by deadline.

    All samples advance in lockstep with common random ranks. At ``u``'s
    deadline every ``f_hat(u, .)`` starts at 1; each round re-estimates the
    lookahead levels and lowers every entry with ``f_hat - f(x) > epsilon``
    by ``epsilon / 101``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if samples < 1:
        raise ValueError("samples must be positive")
    n = inst.n
    rng = np.random.default_rng(seed)
    gy = np.asarray(funcs.g(rng.random((samples, n))), dtype=float)
    f = funcs.f
    step = epsilon / 101
    if max_rounds is None:
        max_rounds = math.ceil(1.0 / step) + 2
    partner = np.full((samples, n), -1, dtype=np.int64)
    passive = np.zeros((samples, n), dtype=bool)
    expired = np.zeros(n, dtype=bool)
    arrived = np.zeros(n, dtype=bool)
    entries: dict[tuple[int, int], float] = {}
    lookahead: dict[tuple[int, int], float] = {}
    rows = np.arange(samples)
    for kind, u in inst.timeline:
        if kind == ARRIVAL:
            arrived[u] = True
            continue
        nbrs = np.array([v for v in inst.neighbors(u) if arrived[v] and not expired[v]], dtype=np.int64)
        expired[u] = True
        if nbrs.size == 0:
            continue
        free_u = partner[:, u] < 0
        base = 1.0 - gy[:, nbrs]
        base[partner[:, nbrs] >= 0] = -np.inf
        live = free_u & np.isfinite(base).any(axis=1)
        base_live = base[live]
        prior = passive[:, nbrs].mean(axis=0)
        fh = np.ones(nbrs.size)
        for _ in range(max_rounds + 1):
            pick = np.argmax(base_live - fh, axis=1)
            x = prior + np.bincount(pick, minlength=nbrs.size) / samples
            viol = fh - f(np.minimum(x, 1.0)) > epsilon
            if not viol.any():
                break
            fh[viol] -= step
        else:
            raise OfferTableError(f"offer refinement at vertex {u} exceeded {max_rounds} rounds")
        for v, fv, xv in zip(nbrs, fh, x):
            entries[u, int(v)] = float(fv)
            lookahead[u, int(v)] = float(xv)
        chosen = nbrs[pick]
        r = rows[live]
        partner[r, u] = chosen
        partner[r, chosen] = u
        passive[r, chosen] = True
    return OfferTable(entries, epsilon, samples, seed, lookahead)


# ---------------------------------------------------------------- water levels


@dataclass
class WaterLevels:
    x: np.ndarray                                 # Pr[v passive] at the end
    x_se: np.ndarray
    lookahead: dict[tuple[int, int], float]       # Pr[v passive right after u's deadline]
    lookahead_se: dict[tuple[int, int], float]
    trials: int
    seed: int


def estimate_water_levels(inst: Instance, funcs=None, tables: OfferTable | None = None,
                          trials: int = 10_000, seed: int = 0, g=default_g) -> WaterLevels:
    """Monte-Carlo passive probabilities for Ranking (no tables) or Balanced Ranking."""
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    ranks = rng.random((trials, inst.n))
    gfun = funcs.g if funcs is not None else g
    run = simulate_batch(inst, np.asarray(gfun(ranks), dtype=float), tables)
    pas = run.role == PASSIVE
    x = pas.mean(axis=0)
    se = np.sqrt(x * (1 - x) / trials)
    look, look_se = {}, {}
    for u in range(inst.n):
        du = inst.deadline_time(u)
        for v in inst.neighbors(u):
            if inst.deadline_time(v) < du:
                continue
            p = float((pas[:, v] & (run.match_time[:, v] <= du)).mean())
            look[u, v] = p
            look_se[u, v] = math.sqrt(p * (1 - p) / trials)
    return WaterLevels(x, se, look, look_se, trials, seed)
