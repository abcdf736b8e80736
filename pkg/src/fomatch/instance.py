"""Fully online matching instances: a graph plus an arrival/deadline timeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARRIVAL = "A"
DEADLINE = "D"


class InstanceParseError(ValueError):
    """Malformed instance file; the message names the line or field."""


@dataclass(frozen=True)
class Instance:
    n: int
    edges: tuple[tuple[int, int], ...]
    timeline: tuple[tuple[str, int], ...]
    bipartition: tuple[int, ...] | None = None
    _adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _arrive: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _deadline: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = tuple(sorted((min(u, v), max(u, v)) for u, v in self.edges))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "timeline", tuple((k, int(v)) for k, v in self.timeline))
        if self.bipartition is not None:
            object.__setattr__(self, "bipartition", tuple(int(c) for c in self.bipartition))
        adj = [set() for _ in range(self.n)]
        for u, v in edges:
            if 0 <= u < self.n and 0 <= v < self.n and u != v:
                adj[u].add(v)
                adj[v].add(u)
        arrive = [-1] * self.n
        deadline = [-1] * self.n
        for t, (kind, v) in enumerate(self.timeline):
            if 0 <= v < self.n:
                (arrive if kind == ARRIVAL else deadline)[v] = t
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))
        object.__setattr__(self, "_arrive", tuple(arrive))
        object.__setattr__(self, "_deadline", tuple(deadline))

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self._adj[v]

    def arrival_time(self, v: int) -> int:
        return self._arrive[v]

    def deadline_time(self, v: int) -> int:
        return self._deadline[v]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def deadline_first(self, u: int, v: int) -> bool:
        return self._deadline[u] < self._deadline[v]


def from_edges(n: int, edges, timeline=None, bipartition=None) -> Instance:
    """Build an instance; the default timeline is all arrivals, then all deadlines, by id."""
    if timeline is None:
        timeline = [(ARRIVAL, v) for v in range(n)] + [(DEADLINE, v) for v in range(n)]
    return Instance(n, tuple(tuple(e) for e in edges), tuple(timeline), bipartition)


def validate(inst: Instance) -> list[str]:
    out = []
    n = inst.n
    seen = set()
    for u, v in inst.edges:
        if not (0 <= u < n and 0 <= v < n):
            out.append(f"edge ({u},{v}) references unknown vertex")
            continue
        if u == v:
            out.append(f"self-loop at vertex {u}")
        elif (u, v) in seen:
            out.append(f"duplicate edge ({u},{v})")
        seen.add((u, v))
    counts = {}
    for kind, v in inst.timeline:
        if kind not in (ARRIVAL, DEADLINE):
            out.append(f"unknown event kind {kind!r} for vertex {v}")
        elif not 0 <= v < n:
            out.append(f"event for unknown vertex {v}")
        else:
            counts[kind, v] = counts.get((kind, v), 0) + 1
    for v in range(n):
        for kind, label in ((ARRIVAL, "arrival"), (DEADLINE, "deadline")):
            c = counts.get((kind, v), 0)
            if c != 1:
                out.append(f"vertex {v} has {c} {label} events")
        if counts.get((ARRIVAL, v)) == 1 and counts.get((DEADLINE, v)) == 1:
            if inst.arrival_time(v) > inst.deadline_time(v):
                out.append(f"vertex {v} deadline precedes its arrival")
    for u, v in inst.edges:
        if u == v or not (0 <= u < n and 0 <= v < n):
            continue
        if max(inst.arrival_time(u), inst.arrival_time(v)) > min(inst.deadline_time(u), inst.deadline_time(v)):
            first = u if inst.deadline_time(u) < inst.deadline_time(v) else v
            other = v if first == u else u
            out.append(f"edge ({u},{v}): vertex {other} arrives after vertex {first}'s deadline")
    if inst.bipartition is not None:
        if len(inst.bipartition) != n or any(c not in (0, 1) for c in inst.bipartition):
            out.append("bipartition must assign 0 or 1 to every vertex")
        else:
            for u, v in inst.edges:
                if 0 <= u < n and 0 <= v < n and inst.bipartition[u] == inst.bipartition[v]:
                    out.append(f"edge ({u},{v}) does not cross the bipartition")
    return out


def remove_vertex(inst: Instance, u: int) -> tuple[Instance, dict[int, int]]:
    """Delete ``u``; returns the smaller instance and the old-to-new id map."""
    if not 0 <= u < inst.n:
        raise KeyError(f"unknown vertex {u}")
    remap = {v: v - (v > u) for v in range(inst.n) if v != u}
    edges = [(remap[a], remap[b]) for a, b in inst.edges if u not in (a, b)]
    timeline = [(k, remap[v]) for k, v in inst.timeline if v != u]
    bip = None
    if inst.bipartition is not None:
        bip = [c for v, c in enumerate(inst.bipartition) if v != u]
    return Instance(inst.n - 1, tuple(edges), tuple(timeline), bip), remap


def generate_random(n: int, edge_prob: float, bipartite: bool = False, seed: int = 0) -> Instance:
    """Random graph with a random timeline that respects the arrival guarantee.

    Arrivals are a uniform permutation; each deadline is then inserted at a
    uniform slot after the last arrival among the vertex and its neighbours.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    side = None
    if bipartite:
        side = [int(c) for c in rng.integers(0, 2, n)]
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if side is not None and side[u] == side[v]:
                continue
            if rng.random() < edge_prob:
                edges.append((u, v))
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seq = [(ARRIVAL, int(v)) for v in rng.permutation(n)]
    for v in rng.permutation(n):
        v = int(v)
        need = {v, *adj[v]}
        last = max(i for i, (k, w) in enumerate(seq) if k == ARRIVAL and w in need)
        slot = int(rng.integers(last + 1, len(seq) + 1))
        seq.insert(slot, (DEADLINE, v))
    return Instance(n, tuple(edges), tuple(seq), side)


def generate_upper_triangular(n: int) -> Instance:
    """Left ``l_i = i`` and right ``r_j = n + j`` with an edge iff ``i <= j``."""
    if n < 1:
        raise ValueError("n must be positive")
    edges = [(i, n + j) for i in range(n) for j in range(i, n)]
    timeline = [(ARRIVAL, i) for i in range(n)]
    for j in range(n):
        timeline += [(ARRIVAL, n + j), (DEADLINE, n + j)]
    timeline += [(DEADLINE, i) for i in range(n)]
    return Instance(2 * n, tuple(edges), tuple(timeline), tuple([0] * n + [1] * n))


def to_json(inst: Instance) -> str:
    doc = {
        "n": inst.n,
        "bipartition": list(inst.bipartition) if inst.bipartition is not None else None,
        "edges": [list(e) for e in inst.edges],
        "timeline": [[k, v] for k, v in inst.timeline],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def from_json(text: str, source: str = "<string>") -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceParseError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise InstanceParseError(f"{source}: top level must be an object")

    def fail(fieldname, msg):
        raise InstanceParseError(f"{source}: field {fieldname}: {msg}")

    n = doc.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        fail("n", "must be a non-negative integer")
    edges = doc.get("edges")
    if not isinstance(edges, list):
        fail("edges", "must be a list")
    seen = set()
    parsed_edges = []
    for i, e in enumerate(edges):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            fail(f"edges[{i}]", "must be a pair of integers")
        u, v = e
        if not (0 <= u < n and 0 <= v < n):
            fail(f"edges[{i}]", f"unknown vertex id in ({u},{v})")
        if u == v:
            fail(f"edges[{i}]", f"self-loop at {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            fail(f"edges[{i}]", f"duplicate edge ({u},{v})")
        seen.add(key)
        parsed_edges.append(key)
    timeline = doc.get("timeline")
    if not isinstance(timeline, list):
        fail("timeline", "must be a list")
    parsed_tl = []
    counts = {}
    for i, ev in enumerate(timeline):
        if not (isinstance(ev, list) and len(ev) == 2 and ev[0] in (ARRIVAL, DEADLINE)
                and isinstance(ev[1], int) and not isinstance(ev[1], bool)):
            fail(f"timeline[{i}]", 'must be ["A"|"D", vertex]')
        if not 0 <= ev[1] < n:
            fail(f"timeline[{i}]", f"unknown vertex id {ev[1]}")
        counts[ev[0], ev[1]] = counts.get((ev[0], ev[1]), 0) + 1
        if counts[ev[0], ev[1]] > 1:
            fail(f"timeline[{i}]", f"repeated {ev[0]} event for vertex {ev[1]}")
        parsed_tl.append((ev[0], ev[1]))
    for v in range(n):
        if (ARRIVAL, v) not in counts:
            fail("timeline", f"missing arrival event for vertex {v}")
        if (DEADLINE, v) not in counts:
            fail("timeline", f"missing deadline event for vertex {v}")
    bip = doc.get("bipartition")
    if bip is not None:
        if not (isinstance(bip, list) and len(bip) == n and all(c in (0, 1) for c in bip)):
            fail("bipartition", "must be null or a 0/1 list of length n")
    inst = Instance(n, tuple(parsed_edges), tuple(parsed_tl), bip)
    problems = validate(inst)
    if problems:
        raise InstanceParseError(f"{source}: invalid instance: {problems[0]}")
    return inst


def write(path, inst: Instance) -> None:
    Path(path).write_text(to_json(inst), encoding="utf-8")


def read(path) -> Instance:
    return from_json(Path(path).read_text(encoding="utf-8"), source=str(path))
