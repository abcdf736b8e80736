"""Water-filling and Eager Water-filling, simulated exactly segment by segment.

Pouring is continuous; between breakpoints (a new level joins the lowest
set, a level reaches 1, the pourer fills up, or the eager stopping rule
fires) every quantity is linear in time, so duals integrate in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dualfuncs import LinearSpline
from ..instance import ARRIVAL, Instance


class _Acc:
    """Neumaier-compensated running sum."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float) -> None:
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def value(self) -> float:
        return self.s + self.c


@dataclass
class PourSegment:
    active: int
    passive: tuple[int, ...]
    amount: float          # rise of each passive level
    level_start: float
    level_end: float
    eager: bool


@dataclass
class FractionalRun:
    x_edge: dict[tuple[int, int], float]
    water: np.ndarray
    alpha: np.ndarray
    trace: list[PourSegment]
    level_after_arrival: np.ndarray              # t_v
    level_before_deadline: np.ndarray            # p_u
    after_deadline: dict[tuple[int, int], tuple[float, float, float]] = field(default_factory=dict)
    # (u, v) with u's deadline first -> (alpha_u, alpha_v, level of v) right after u's deadline

    @property
    def value(self) -> float:
        return math.fsum(self.x_edge.values())

    @property
    def dual_total(self) -> float:
        return math.fsum(self.alpha)


def _as_spline(f) -> LinearSpline:
    if isinstance(f, LinearSpline):
        return f
    raise TypeError("f must be a piecewise-linear spline with closed-form integrals")


class _State:
    def __init__(self, inst: Instance, f: LinearSpline):
        self.inst = inst
        self.f = f
        self.level = [0.0] * inst.n
        self.alpha = [_Acc() for _ in range(inst.n)]
        self.x_edge = {e: _Acc() for e in inst.edges}
        self.trace: list[PourSegment] = []
        self.arrived = [False] * inst.n
        self.expired = [False] * inst.n

    def usable(self, u: int) -> list[int]:
        return [v for v in self.inst.neighbors(u)
                if self.arrived[v] and not self.expired[v] and self.level[v] < 1.0]

    def pour(self, u: int, members: list[int], lo: float, hi: float, eager: bool) -> None:
        """Raise every member from ``lo`` to ``hi``; ``u`` gains the matching mass."""
        d = hi - lo
        if d <= 0.0:
            return
        gained = self.f.integral(lo, hi)
        for v in members:
            self.alpha[v].add(gained)
            self.alpha[u].add(d - gained)
            self.x_edge[min(u, v), max(u, v)].add(d)
            self.level[v] = hi
        self.level[u] = min(1.0, self.level[u] + len(members) * d)
        self.trace.append(PourSegment(u, tuple(members), d, lo, hi, eager))

    def lowest(self, u: int):
        cand = self.usable(u)
        if not cand:
            return None, [], math.inf
        L = min(self.level[v] for v in cand)
        members = [v for v in cand if self.level[v] == L]
        above = [self.level[v] for v in cand if self.level[v] > L]
        return L, members, min(above, default=math.inf)

    def deadline_step(self, u: int) -> None:
        while self.level[u] < 1.0:
            L, members, nxt = self.lowest(u)
            if not members:
                break
            fill = L + (1.0 - self.level[u]) / len(members)
            if fill <= min(nxt, 1.0):
                self.pour(u, members, L, fill, False)
                self.level[u] = 1.0
                break
            self.pour(u, members, L, min(nxt, 1.0), False)

    def eager_step(self, u: int, h: LinearSpline, h_knots: np.ndarray) -> None:
        f = self.f
        while self.level[u] < 1.0:
            L, members, nxt = self.lowest(u)
            if not members:
                break
            xu = self.level[u]
            if f(xu) + f(L) >= 1.0:
                break
            k = len(members)
            fill = L + (1.0 - xu) / k
            cap = min(nxt, 1.0, fill)
            if f(min(1.0, xu + k * (cap - L))) + f(cap) > 1.0:
                a = _crossing(h, h_knots, k, xu - k * L)
                self.pour(u, members, L, min(max(h(1.0 - a), L), cap), True)
                break
            self.pour(u, members, L, cap, True)
            if cap == fill:
                self.level[u] = 1.0

    def result(self) -> FractionalRun:
        return FractionalRun(
            {e: a.value for e, a in self.x_edge.items()},
            np.array(self.level), np.array([a.value for a in self.alpha]), self.trace,
            np.zeros(self.inst.n), np.zeros(self.inst.n))


def _crossing(h: LinearSpline, knots: np.ndarray, k: int, target: float) -> float:
    """Solve ``h(a) - k h(1 - a) = target`` for ``a``; the left side increases in ``a``."""
    vals = h(knots) - k * h(1.0 - knots)
    j = int(np.searchsorted(vals, target, side="left"))
    if j <= 0:
        return 0.0
    if j >= len(knots):
        return 1.0
    a0, a1, v0, v1 = knots[j - 1], knots[j], vals[j - 1], vals[j]
    return float(a0 + (target - v0) / (v1 - v0) * (a1 - a0)) if v1 > v0 else float(a1)


def _run(inst: Instance, f, eager: bool) -> FractionalRun:
    f = _as_spline(f)
    st = _State(inst, f)
    h = knots = None
    if eager:
        if not np.all(np.diff(f.values) > 0):
            raise ValueError("f must be strictly increasing")
        if f.values[0] != 0.0 or f.values[-1] != 1.0:
            raise ValueError("f must satisfy f(0) = 0 and f(1) = 1")
        h = LinearSpline(f.values, f.knots)
        knots = np.unique(np.concatenate([h.knots, 1.0 - h.knots]))
    t_level = np.zeros(inst.n)
    p_level = np.zeros(inst.n)
    after = {}
    for kind, u in inst.timeline:
        if kind == ARRIVAL:
            st.arrived[u] = True
            if eager:
                st.eager_step(u, h, knots)
            t_level[u] = st.level[u]
            continue
        p_level[u] = st.level[u]
        st.deadline_step(u)
        st.expired[u] = True
        au = st.alpha[u].value
        for v in inst.neighbors(u):
            if inst.deadline_time(v) > inst.deadline_time(u):
                after[u, v] = (au, st.alpha[v].value, st.level[v])
    run = st.result()
    run.level_after_arrival = t_level
    run.level_before_deadline = p_level
    run.after_deadline = after
    return run


def run_waterfilling(inst: Instance, f) -> FractionalRun:
    """At each deadline, pour into the lowest-level usable neighbours until full."""
    return _run(inst, f, eager=False)


def run_eager_waterfilling(inst: Instance, f) -> FractionalRun:
    """Water-filling plus an arrival step that pours while ``f(x_u) + f(x_v) < 1``."""
    return _run(inst, f, eager=True)


def ledger_bound(f: LinearSpline, t_u, t_v, p_u, p_v) -> float:
    """Lower bound on ``alpha_u + alpha_v`` right after ``u``'s deadline."""
    return (t_v * f(t_v) + f.integral(t_v, p_v) + t_u * f(t_u) + f.integral(t_u, p_u)
            + (1 - p_u) * (1 - f(p_v)))
