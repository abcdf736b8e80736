"""Offline optima used as competitive-ratio denominators."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .lp import DenseRows, LinearProgram, LpStatus, solve


class NotBipartiteError(ValueError):
    pass


@dataclass(frozen=True)
class OfflineOptimum:
    value: float
    kind: str                      # "integral-bipartite" or "fractional-lp"
    witness: dict[tuple[int, int], float]


def _two_coloring(inst: Instance) -> list[int]:
    if inst.bipartition is not None:
        side = list(inst.bipartition)
        for u, v in inst.edges:
            if side[u] == side[v]:
                raise NotBipartiteError(f"edge ({u},{v}) inside one side")
        return side
    side = [-1] * inst.n
    for s in range(inst.n):
        if side[s] >= 0:
            continue
        side[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in inst.neighbors(u):
                if side[v] < 0:
                    side[v] = 1 - side[u]
                    queue.append(v)
                elif side[v] == side[u]:
                    raise NotBipartiteError("graph has an odd cycle")
    return side


def max_matching_bipartite(inst: Instance) -> OfflineOptimum:
    """Hopcroft-Karp maximum-cardinality matching."""
    side = _two_coloring(inst)
    left = [u for u in range(inst.n) if side[u] == 0]
    mate = [-1] * inst.n
    dist = {}

    def bfs() -> bool:
        queue = deque()
        for u in left:
            if mate[u] < 0:
                dist[u] = 0
                queue.append(u)
            else:
                dist[u] = math.inf
        found = False
        while queue:
            u = queue.popleft()
            for v in inst.neighbors(u):
                w = mate[v]
                if w < 0:
                    found = True
                elif dist[w] == math.inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found

    def dfs(u) -> bool:
        for v in inst.neighbors(u):
            w = mate[v]
            if w < 0 or (dist[w] == dist[u] + 1 and dfs(w)):
                mate[u], mate[v] = v, u
                return True
        dist[u] = math.inf
        return False

    size = 0
    while bfs():
        for u in left:
            if mate[u] < 0 and dfs(u):
                size += 1
    witness = {(min(u, mate[u]), max(u, mate[u])): 1.0 for u in left if mate[u] >= 0}
    return OfflineOptimum(float(size), "integral-bipartite", witness)


def fractional_opt(inst: Instance, tol: float = 1e-9) -> OfflineOptimum:
    """Optimum of the fractional matching LP (one variable per edge, vertex capacities 1)."""
    m = inst.num_edges
    if m == 0:
        return OfflineOptimum(0.0, "fractional-lp", {})
    rows = []
    for v in range(inst.n):
        inc = {k: 1.0 for k, e in enumerate(inst.edges) if v in e}
        if inc:
            rows.append((inc, 1.0))
    lp = LinearProgram(np.ones(m), np.zeros(m), np.ones(m), [DenseRows.from_sparse(m, rows, "capacity")])
    sol = solve(lp, tol)
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"matching LP returned {sol.status.value}")
    x = np.clip(sol.x, 0.0, 1.0)
    witness = {e: float(x[k]) for k, e in enumerate(inst.edges)}
    if witness_violation(inst, witness) > 1e-9:
        raise RuntimeError("matching LP witness infeasible")
    return OfflineOptimum(math.fsum(witness.values()), "fractional-lp", witness)


def witness_violation(inst: Instance, witness: dict[tuple[int, int], float]) -> float:
    """Largest capacity or sign violation of an edge-fraction vector."""
    load = [0.0] * inst.n
    worst = 0.0
    edges = set(inst.edges)
    for (u, v), x in witness.items():
        if (u, v) not in edges:
            return math.inf
        worst = max(worst, -x)
        load[u] += x
        load[v] += x
    return max([worst] + [l - 1.0 for l in load])
