"""Dense linear-program solver with lazy constraint generation.

Problems have the form::

    maximize    c @ x
    subject to  A x <= b          (rows from one or more constraint families)
                lo <= x <= hi

The solver is a dual simplex that works on a basis of ``num_vars`` *rows*
(bounds or constraints) rather than on columns. Box bounds give a dual
feasible starting basis for free, and adding a cut keeps the current basis
dual feasible, so each round of constraint generation resumes where the last
one stopped instead of re-solving from scratch.

Constraint families expose two independent evaluation paths:

* ``residuals(x)`` -- fast closed-form residuals for every row, used to find
  violated cuts;
* ``rows(idx, x)`` -- explicit coefficient rows, used to add cuts to the
  working set and by :func:`verify` to re-check a point by enumeration.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
ACCEPT_TOL = 1e-6
BATCH_LIMIT = 1000
BLAND_AFTER = 50
REFACTOR_EVERY = 100
BIG = 1e7
PIN_LIMIT = 20_000

__all__ = [
    "ConstraintFamily",
    "DenseRows",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "LpIterationLimit",
    "solve",
    "verify",
]


class LpIterationLimit(RuntimeError):
    pass


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class ConstraintFamily:
    """A block of ``a_i @ x <= b_i`` rows, indexed ``0 .. count() - 1``.

    Rows may depend on the evaluation point (a concave ``min`` term is
    represented by the row whose linear piece is active at ``x``). For such a
    family ``rows(idx, x)`` returns the tightest linear row at ``x``, which is
    a valid relaxation everywhere and exact at ``x``.
    """

    name = "constraints"

    def count(self) -> int:
        raise NotImplementedError

    def residuals(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rows(self, idx: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def blocks(self, size: int = 4096):
        total = self.count()
        for start in range(0, total, size):
            yield np.arange(start, min(start + size, total))


class DenseRows(ConstraintFamily):
    """Materialized rows held in a dense matrix."""

    def __init__(self, A, b, name: str = "rows"):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("row count and rhs length differ")
        self.name = name

    @classmethod
    def from_sparse(cls, num_vars: int, entries: Sequence[tuple[dict, float]], name: str = "rows"):
        """Build from ``[({var: coeff}, rhs), ...]``."""
        A = np.zeros((len(entries), num_vars))
        b = np.zeros(len(entries))
        for i, (row, rhs) in enumerate(entries):
            for j, coef in row.items():
                if not 0 <= j < num_vars:
                    raise ValueError(f"row {i} references variable {j} outside 0..{num_vars - 1}")
                A[i, j] += coef
            b[i] = rhs
        return cls(A, b, name=name)

    def count(self) -> int:
        return self.A.shape[0]

    def residuals(self, x):
        if self.count() == 0:
            return np.zeros(0)
        return self.A @ x - self.b

    def rows(self, idx, x):
        return self.A[idx], self.b[idx]


@dataclass
class LinearProgram:
    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    families: list[ConstraintFamily] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.shape[0]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"variable {bad}: lower bound exceeds upper bound")
        for fam in self.families:
            if isinstance(fam, DenseRows) and fam.count() and fam.A.shape[1] != n:
                raise ValueError(f"family {fam.name!r} has {fam.A.shape[1]} columns, expected {n}")

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    def num_rows(self) -> int:
        return sum(f.count() for f in self.families)


@dataclass
class LpSolution:
    x: np.ndarray
    objective_value: float
    max_violation: float
    status: LpStatus
    stats: dict = field(default_factory=dict)


def verify(lp: LinearProgram, x, block: int = 4096) -> float:
    """Largest residual of ``x`` over bounds and every row (0 if feasible)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (lp.num_vars,):
        raise ValueError(f"expected {lp.num_vars} values, got shape {x.shape}")
    worst = 0.0
    with np.errstate(invalid="ignore"):
        worst = max(worst, float(np.max(np.where(np.isfinite(lp.upper), x - lp.upper, 0.0), initial=0.0)))
        worst = max(worst, float(np.max(np.where(np.isfinite(lp.lower), lp.lower - x, 0.0), initial=0.0)))
    for fam in lp.families:
        for idx in fam.blocks(block):
            A, b = fam.rows(idx, x)
            if len(b):
                worst = max(worst, float(np.max(A @ x - b)))
    return worst


class _WorkingSet:
    """Rows of the current restricted problem; the first ``fixed`` rows (bounds first) are never purged."""

    def __init__(self, lp: LinearProgram):
        n = lp.num_vars
        self.n = n
        lo = np.where(np.isfinite(lp.lower), lp.lower, -BIG)
        hi = np.where(np.isfinite(lp.upper), lp.upper, BIG)
        self.artificial = np.concatenate([~np.isfinite(lp.upper), ~np.isfinite(lp.lower)])
        cap = max(4 * n, 256)
        self.A = np.zeros((cap, n))
        self.b = np.zeros(cap)
        eye = np.eye(n)
        self.A[:n] = eye
        self.b[:n] = hi
        self.A[n:2 * n] = -eye
        self.b[n:2 * n] = -lo
        self.m = 2 * n
        self.fixed = 2 * n
        self.norm = np.ones(cap)

    def add(self, A: np.ndarray, b: np.ndarray) -> np.ndarray:
        k = A.shape[0]
        if self.m + k > self.A.shape[0]:
            cap = max(2 * self.A.shape[0], self.m + k)
            A_new = np.zeros((cap, self.n))
            A_new[: self.m] = self.A[: self.m]
            b_new = np.zeros(cap)
            b_new[: self.m] = self.b[: self.m]
            nrm = np.ones(cap)
            nrm[: self.m] = self.norm[: self.m]
            self.A, self.b, self.norm = A_new, b_new, nrm
        sl = slice(self.m, self.m + k)
        self.A[sl] = A
        self.b[sl] = b
        self.norm[sl] = np.maximum(np.linalg.norm(A, axis=1), 1e-12)
        self.m += k
        return np.arange(sl.start, sl.stop)

    def keep(self, mask: np.ndarray) -> np.ndarray:
        """Retain rows where ``mask`` is true; returns the old-to-new index map (-1 if dropped)."""
        mask = mask.copy()
        mask[: self.fixed] = True
        new_index = np.cumsum(mask) - 1
        new_index[~mask] = -1
        kept = int(mask.sum())
        self.A[:kept] = self.A[: self.m][mask]
        self.b[:kept] = self.b[: self.m][mask]
        self.norm[:kept] = self.norm[: self.m][mask]
        self.m = kept
        return new_index


class _DualSimplex:
    def __init__(self, lp: LinearProgram, tol: float, max_iter: int):
        self.lp = lp
        self.tol = tol
        self.max_iter = max_iter
        self.ws = _WorkingSet(lp)
        n = lp.num_vars
        c = lp.objective
        # bound row j (upper) or n + j (lower) so that duals start at |c_j| >= 0
        self.basis = np.where(c > 0, np.arange(n), n + np.arange(n))
        self.iterations = 0
        self.pivots_since_refactor = 0
        self.stalled = 0
        self.in_basis = np.zeros(self.ws.A.shape[0], dtype=bool)
        self._refactor()

    def _refactor(self):
        ws = self.ws
        B = ws.A[self.basis]
        self.Binv = np.linalg.inv(B)
        self.x = self.Binv @ ws.b[self.basis]
        self.y = self.lp.objective @ self.Binv
        np.maximum(self.y, 0.0, out=self.y)
        self.res = ws.A[: ws.m] @ self.x - ws.b[: ws.m]
        self.in_basis = np.zeros(ws.m, dtype=bool)
        self.in_basis[self.basis] = True
        self.pivots_since_refactor = 0

    def add_rows(self, A, b):
        new = self.ws.add(A, b)
        self.res = np.concatenate([self.res, A @ self.x - b])
        self.in_basis = np.concatenate([self.in_basis, np.zeros(len(new), dtype=bool)])
        return new

    def purge(self, slack: float) -> int:
        """Drop non-basic cuts with residual below ``-slack``; x, y and the basis are unchanged."""
        ws = self.ws
        drop = ~self.in_basis & (self.res < -slack)
        drop[: ws.fixed] = False
        count = int(drop.sum())
        if count:
            new_index = ws.keep(~drop)
            self.basis = new_index[self.basis]
            self.res = self.res[~drop]
            self.in_basis = self.in_basis[~drop]
        return count

    def objective(self) -> float:
        return float(self.lp.objective @ self.x)

    def run(self) -> LpStatus:
        ws = self.ws
        while True:
            viol = np.where(self.in_basis, 0.0, self.res)
            if self.stalled >= BLAND_AFTER:
                cand = np.flatnonzero(viol > self.tol)
                if cand.size == 0:
                    return LpStatus.OPTIMAL
                r = int(cand[0])
            else:
                score = viol / ws.norm[: ws.m]
                r = int(np.argmax(score))
                if viol[r] <= self.tol:
                    return LpStatus.OPTIMAL
            if self.iterations >= self.max_iter:
                raise LpIterationLimit(f"simplex exceeded {self.max_iter} iterations")
            self.iterations += 1

            w = ws.A[r] @ self.Binv
            wmax = float(np.max(np.abs(w)))
            eligible = w > 1e-9 * max(1.0, wmax)
            if not np.any(eligible):
                return LpStatus.INFEASIBLE
            ratios = np.full(w.shape, np.inf)
            ratios[eligible] = self.y[eligible] / w[eligible]
            tmin = float(np.min(ratios))
            ties = np.flatnonzero(ratios <= tmin + 1e-12)
            if self.stalled >= BLAND_AFTER:
                k = int(ties[np.argmin(self.basis[ties])])
            else:
                k = int(ties[np.argmax(w[ties])])
            t = max(float(ratios[k]), 0.0)
            wk = float(w[k])

            self.stalled = self.stalled + 1 if t * self.res[r] <= 1e-14 else 0

            self.y -= t * w
            self.y[k] = t
            np.maximum(self.y, 0.0, out=self.y)

            col = self.Binv[:, k].copy()
            step = self.res[r] / wk
            self.x -= step * col
            self.res -= step * (ws.A[: ws.m] @ col)

            colk = col / wk
            self.Binv -= np.outer(colk, w)
            self.Binv[:, k] = colk

            self.in_basis[self.basis[k]] = False
            self.in_basis[r] = True
            self.basis[k] = r
            self.res[r] = 0.0

            self.pivots_since_refactor += 1
            if self.pivots_since_refactor >= REFACTOR_EVERY:
                self._refactor()

    def unbounded(self) -> bool:
        art = self.basis[self.basis < 2 * self.ws.n]
        ys = self.y[self.basis < 2 * self.ws.n]
        return bool(np.any(self.ws.artificial[art] & (ys > self.tol)))


def _select_cuts(families, x, tol, limit):
    """Most violated rows over all families, stable by (family, index)."""
    picks = []
    for fi, fam in enumerate(families):
        if fam.count() == 0:
            continue
        r = fam.residuals(x)
        idx = np.flatnonzero(r > tol)
        if idx.size:
            picks.append((np.full(idx.size, fi), idx, r[idx]))
    if not picks:
        return []
    fam_id = np.concatenate([p[0] for p in picks])
    idx = np.concatenate([p[1] for p in picks])
    val = np.concatenate([p[2] for p in picks])
    order = np.lexsort((idx, fam_id, -val))[:limit]
    out = []
    for fi in np.unique(fam_id[order]):
        chosen = np.sort(idx[order][fam_id[order] == fi])
        out.append((int(fi), chosen))
    return out


def solve(lp: LinearProgram, tol: float = SIMPLEX_TOL, *, batch: int = BATCH_LIMIT,
          max_iter: int = 500_000, max_rounds: int = 10_000, seed_rows=None,
          verify_solution: bool = True, purge_slack: float | None = 1e-6) -> LpSolution:
    """Solve ``lp`` to optimality with lazy constraint generation.

    ``seed_rows`` is an optional ``(A, b)`` pair added to the working set
    before the first round (warm start from a related problem). Between
    rounds, non-basic cuts slack by more than ``purge_slack`` are dropped
    (``None`` keeps every cut). Materialized families of at most
    ``PIN_LIMIT`` rows are loaded before the first round and never dropped. Raises :class:`LpIterationLimit` rather than
    returning a suboptimal point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    ds = _DualSimplex(lp, tol, max_iter)
    # small materialized families go in up front and stay: chains such as
    # Lipschitz rows would otherwise be discovered one link per round
    pinned = [fam for fam in lp.families if isinstance(fam, DenseRows) and 0 < fam.count() <= PIN_LIMIT]
    for fam in pinned:
        ds.add_rows(fam.A, fam.b)
    ds.ws.fixed = ds.ws.m
    lazy = [fam for fam in lp.families if not any(fam is p for p in pinned)]
    if seed_rows is not None and len(seed_rows[1]):
        ds.add_rows(np.asarray(seed_rows[0], float), np.asarray(seed_rows[1], float))
    rounds = purged = 0
    status = LpStatus.OPTIMAL
    while True:
        status = ds.run()
        if status is not LpStatus.OPTIMAL:
            break
        cuts = _select_cuts(lazy, ds.x, tol, batch)
        if not cuts:
            ds._refactor()
            if np.max(np.where(ds.in_basis, 0.0, ds.res), initial=0.0) > tol:
                continue
            break
        rounds += 1
        if rounds > max_rounds:
            raise LpIterationLimit(f"constraint generation exceeded {max_rounds} rounds")
        if purge_slack is not None:
            purged += ds.purge(purge_slack)
        added = 0
        for fi, idx in cuts:
            A, b = lazy[fi].rows(idx, ds.x)
            ds.add_rows(A, b)
            added += len(b)
        logger.debug("round %d: +%d cuts, objective %.10f, %d pivots",
                     rounds, added, ds.objective(), ds.iterations)
    if status is LpStatus.OPTIMAL and ds.unbounded():
        status = LpStatus.UNBOUNDED
    x = ds.x.copy()
    stats = {
        "iterations": ds.iterations,
        "rounds": rounds,
        "working_rows": int(ds.ws.m - 2 * lp.num_vars),
        "pinned_rows": int(ds.ws.fixed - 2 * lp.num_vars),
        "purged_rows": purged,
        "seconds": time.perf_counter() - t0,
    }
    if status is not LpStatus.OPTIMAL:
        return LpSolution(x, float("nan"), float("nan"), status, stats)
    # clip tiny bound drift introduced by floating point
    x = np.clip(x, np.where(np.isfinite(lp.lower), lp.lower, -np.inf),
                np.where(np.isfinite(lp.upper), lp.upper, np.inf))
    viol = verify(lp, x) if verify_solution else float("nan")
    stats["seconds"] = time.perf_counter() - t0
    return LpSolution(x, float(lp.objective @ x), viol, status, stats)
