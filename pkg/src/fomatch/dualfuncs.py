"""Dual split functions and the factor-revealing LPs that produce them.

Balanced Ranking splits a unit of gain with ``g(rank) + f(lookahead level)``
and is certified by an auxiliary convex ``ell``; Eager Water-filling uses
``f = h^{-1}``. All of them are piecewise-linear on the grid ``i / n``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lp import ConstraintFamily, DenseRows, LinearProgram, LpSolution, LpStatus, solve

BALANCED_GAMMA = 0.569
EWF_GAMMA = 0.592
EWF_MIN_STEP = 1e-7


class TableFormatError(ValueError):
    """Malformed function or offer table file."""


class LinearSpline:
    """Continuous piecewise-linear function on ``[0, 1]`` through ``(knots, values)``."""

    def __init__(self, knots, values):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape or self.knots.size < 2:
            raise ValueError("knots and values must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(self.knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if self.knots[0] != 0.0 or self.knots[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        dx = np.diff(self.knots)
        self._cum = np.concatenate([[0.0], np.cumsum(dx * (self.values[:-1] + self.values[1:]) / 2)])

    @staticmethod
    def _check(x):
        x = np.asarray(x, dtype=float)
        if np.any(~(x >= 0.0)) or np.any(~(x <= 1.0)):
            raise ValueError("argument outside [0, 1]")
        return x

    def _locate(self, x):
        i = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(i, 0, self.knots.size - 2)

    def __call__(self, x):
        x = self._check(x)
        i = self._locate(x)
        x0, x1 = self.knots[i], self.knots[i + 1]
        z = (x - x0) / (x1 - x0)
        out = (1 - z) * self.values[i] + z * self.values[i + 1]
        return out if out.ndim else float(out)

    def prefix_integral(self, t):
        """Exact integral of the interpolant over ``[0, t]``."""
        t = self._check(t)
        i = self._locate(t)
        x0 = self.knots[i]
        part = (t - x0) * (self.values[i] + self(t)) / 2
        out = self._cum[i] + part
        return out if out.ndim else float(out)

    def integral(self, a, b):
        return self.prefix_integral(b) - self.prefix_integral(a)

    def solve_increasing(self, c):
        """Smallest ``x`` with value ``c`` for a non-decreasing spline, clipped to [0, 1]."""
        c = np.asarray(c, dtype=float)
        v = self.values
        j = np.searchsorted(v, c, side="left")
        j = np.clip(j, 1, v.size - 1)
        v0, v1 = v[j - 1], v[j]
        x0, x1 = self.knots[j - 1], self.knots[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(v1 > v0, (c - v0) / (v1 - v0), 1.0)
        x = np.where(c <= v[0], 0.0, np.where(c >= v[-1], 1.0, x0 + np.clip(z, 0, 1) * (x1 - x0)))
        return x if x.ndim else float(x)


class PiecewiseLinear(LinearSpline):
    """Values on the uniform grid ``i / n`` with linear interpolation between."""

    def __init__(self, values):
        values = np.asarray(values, dtype=float)
        n = values.size - 1
        if n < 1:
            raise ValueError("need at least two grid values")
        super().__init__(np.arange(n + 1) / n, values)
        self.n = n

    def _locate(self, x):
        return np.clip(np.floor(x * self.n).astype(np.int64), 0, self.n - 1)

    def __call__(self, x):
        x = self._check(x)
        nx = x * self.n
        i = np.clip(np.floor(nx).astype(np.int64), 0, self.n - 1)
        z = nx - i
        v = self.values
        out = np.where(z == 0.0, v[i], (1 - z) * v[i] + z * v[i + 1])
        return out if out.ndim else float(out)

    def prefix_integral(self, t):
        t = self._check(t)
        nt = t * self.n
        i = np.clip(np.floor(nt).astype(np.int64), 0, self.n - 1)
        z = nt - i
        part = z * (self.values[i] + self(t)) / (2 * self.n)
        out = self._cum[i] + part
        return out if out.ndim else float(out)

    def grid_integrals(self) -> np.ndarray:
        return self._cum.copy()

    def __eq__(self, other):
        return isinstance(other, PiecewiseLinear) and np.array_equal(self.values, other.values)


def eval_pl(fn: LinearSpline, x):
    return fn(x)


def prefix_integral(fn: LinearSpline, t):
    return fn.prefix_integral(t)


def invert(h: PiecewiseLinear) -> LinearSpline:
    """``f = h^{-1}`` as a spline with knots at ``h(i/n)``."""
    v = np.asarray(h.values, dtype=float)
    if v[0] != 0.0 or v[-1] != 1.0:
        raise ValueError("inverse needs h(0) = 0 and h(1) = 1")
    if not np.all(np.diff(v) > 0):
        raise ValueError("h must be strictly increasing")
    return LinearSpline(v, h.knots)


# ---------------------------------------------------------------- function sets


@dataclass(frozen=True)
class BalancedFunctions:
    f: PiecewiseLinear
    g: PiecewiseLinear
    ell: PiecewiseLinear
    gamma: float

    @property
    def n(self) -> int:
        return self.f.n

    def invariant_violations(self, tol: float = 1e-6) -> list[str]:
        n = self.n
        f, g, ell = self.f.values, self.g.values, self.ell.values
        out = []
        if f[0] < -tol or g[0] < -tol:
            out.append("f(0) or g(0) negative")
        if f[-1] + g[-1] > 1 + tol:
            out.append("f(1) + g(1) > 1")
        df, dg = np.diff(f), np.diff(g)
        if np.any(df < -tol):
            out.append("f decreasing")
        if np.any(df > 1 / n + tol) or np.any(dg > 1 / n + tol):
            out.append("Lipschitz step exceeded")
        if np.any(dg < 1 / (100 * n) - tol):
            out.append("reverse Lipschitz step violated")
        if np.any(ell[1:-1] > (ell[:-2] + ell[2:]) / 2 + tol):
            out.append("ell not convex")
        return out


@dataclass(frozen=True)
class EwfFunction:
    h: PiecewiseLinear
    gamma: float

    @property
    def f(self) -> LinearSpline:
        return invert(self.h)


def big_g(funcs: BalancedFunctions, tau, gamma, theta):
    """Ranking lower bound ``G(tau, gamma, theta)`` in exact closed form."""
    g = funcs.g
    tau, gamma, theta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (tau, gamma, theta)))
    if np.any(theta < gamma - 1e-15):
        raise ValueError("theta must be at least gamma")
    base = g.prefix_integral(tau) + g.prefix_integral(gamma)
    degenerate = theta >= 1.0
    th = np.where(degenerate, 0.0, theta)
    g_th = g(th)
    c = 1.0 - g_th
    cross = np.maximum(g.solve_increasing(c), tau)
    min_int = g.integral(tau, cross) + c * (1.0 - cross)
    general = base + (1 - tau) * (1 - gamma - (1 - th) * g_th) + gamma * min_int
    out = np.where(degenerate, base + (1 - tau) * (1 - gamma), general)
    return out if out.ndim else float(out)


def big_g2(funcs: BalancedFunctions, tau, gamma):
    g = funcs.g
    tau = np.asarray(tau, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    out = g.prefix_integral(tau) + g.prefix_integral(gamma) + (1 - tau) * (1 - gamma)
    return out if np.ndim(out) else float(out)


def big_f(funcs: BalancedFunctions, x_u, x_v):
    f = funcs.f
    x_u = np.asarray(x_u, dtype=float)
    x_v = np.asarray(x_v, dtype=float)
    out = f.prefix_integral(x_u) + f.prefix_integral(x_v) - (1 - x_u) * f(x_v)
    return out if np.ndim(out) else float(out)


def big_h(h: LinearSpline, q):
    """``q h(q) - int_0^q h``."""
    q = np.asarray(q, dtype=float)
    out = q * h(q) - h.prefix_integral(q)
    return out if np.ndim(out) else float(out)


def ewf_v_first(h: LinearSpline, q):
    return big_h(h, q) + 1 - np.asarray(q, dtype=float)


def ewf_u_first(h: LinearSpline, q_u, q_v):
    q_u = np.asarray(q_u, dtype=float)
    q_v = np.asarray(q_v, dtype=float)
    out = big_h(h, q_u) + big_h(h, q_v) + h.prefix_integral(1 - q_u) + (1 - h(q_u)) * (1 - q_v)
    return out if np.ndim(out) else float(out)


def _split(fn: PiecewiseLinear, t):
    t = np.asarray(t, dtype=float)
    n = fn.n
    lo = np.minimum(np.floor(t * n), n) / n
    z = np.where(t >= 1.0, 0.0, t * n - np.floor(t * n))
    hi = np.minimum(lo + 1 / n, 1.0)
    return lo, hi, z


def integral_interpolation_gap(fn: PiecewiseLinear, t):
    """``int_0^t fn`` minus its linear interpolation between the two nearest grid points."""
    lo, hi, z = _split(fn, t)
    return fn.prefix_integral(t) - ((1 - z) * fn.prefix_integral(lo) + z * fn.prefix_integral(hi))


def big_h_interpolation_gap(h: PiecewiseLinear, q):
    lo, hi, z = _split(h, q)
    return big_h(h, q) - ((1 - z) * big_h(h, lo) + z * big_h(h, hi))


# ---------------------------------------------------------------- LP families


def _trapezoid_prefix_weights(n: int) -> np.ndarray:
    """Row ``i`` holds the coefficients of ``int_0^{i/n}`` on grid values."""
    W = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        W[i, :i] += 1 / (2 * n)
        W[i, 1:i + 1] += 1 / (2 * n)
    return W


class _BalancedLayout:
    def __init__(self, n: int):
        self.n = n
        self.F = np.arange(0, n + 1)
        self.G = np.arange(n + 1, 2 * n + 2)
        self.L = np.arange(2 * n + 2, 3 * n + 3)
        self.R = 3 * n + 3
        self.num_vars = 3 * n + 4
        self.grid = np.arange(n + 1) / n
        self.Wpre = _trapezoid_prefix_weights(n)
        self.Wsuf = self.Wpre[n][None, :] - self.Wpre

    def unpack(self, x):
        return x[self.F], x[self.G], x[self.L], x[self.R]


class RankingBoundRows(ConstraintFamily):
    """Strengthened ``G >= ell`` rows for grid ``(tau, gamma, theta)``, ``gamma <= theta + 1/n <= 1``.

    Each row carries ``min{g(y), 1 - g(theta + 1/n)}`` terms; the emitted
    linear row takes whichever side is smaller at the evaluation point.
    """

    name = "ranking-bound"

    def __init__(self, lay: _BalancedLayout):
        self.lay = lay
        n = lay.n
        pairs = [(j, k) for k in range(n) for j in range(k + 2)]
        self.pair_j = np.array([p[0] for p in pairs])
        self.pair_k = np.array([p[1] for p in pairs])
        self.npairs = len(pairs)

    def count(self):
        return (self.lay.n + 1) * self.npairs

    def _decode(self, idx):
        i = idx // self.npairs
        p = idx % self.npairs
        return i, self.pair_j[p], self.pair_k[p]

    def residuals(self, x):
        lay = self.lay
        n = lay.n
        _, g, ell, _ = lay.unpack(x)
        Pg = lay.Wpre @ g
        c = 1.0 - g[1:]                                   # per theta index k
        M = np.minimum(g[None, :], c[:, None])            # (n, n+1)
        S = M @ lay.Wsuf.T                                # S[k, i] suffix trapezoid from i
        t = lay.grid
        j, k = self.pair_j, self.pair_k
        gam, th = t[j], t[k]
        # value[i, p]
        val = (Pg[:, None] + Pg[j][None, :]
               + (1 - t)[:, None] * (1 - gam - (1 - th) * g[k])[None, :]
               + gam[None, :] * S[k].T
               - ell[:, None] - 1 / (2 * n * n))
        return (-val).reshape(-1)

    def rows(self, idx, x):
        lay = self.lay
        n = lay.n
        g = x[lay.G]
        i, j, k = self._decode(np.asarray(idx))
        t = lay.grid
        tau, gam, th = t[i], t[j], t[k]
        B = len(idx)
        A = np.zeros((B, lay.num_vars))
        ar = np.arange(B)
        A[ar, lay.L[i]] += 1.0
        coef_g = -lay.Wpre[i] - lay.Wpre[j]
        coef_g[ar, k] += (1 - tau) * (1 - th)
        c = 1.0 - g[k + 1]
        g_side = g[None, :] <= c[:, None]
        ws = lay.Wsuf[i] * gam[:, None]
        coef_g -= ws * g_side
        other = (ws * ~g_side).sum(axis=1)
        coef_g[ar, k + 1] += other
        A[:, lay.G] += coef_g
        b = (1 - tau) * (1 - gam) - 1 / (2 * n * n) + other
        return A, b


class RankingDegenerateRows(ConstraintFamily):
    """``int_0^tau g + int_0^gamma g + (1-tau)(1-gamma) >= ell(tau) + 1/(4n^2)``."""

    name = "ranking-degenerate"

    def __init__(self, lay: _BalancedLayout):
        self.lay = lay

    def count(self):
        return (self.lay.n + 1) ** 2

    def residuals(self, x):
        lay = self.lay
        n = lay.n
        _, g, ell, _ = lay.unpack(x)
        Pg = lay.Wpre @ g
        t = lay.grid
        val = Pg[:, None] + Pg[None, :] + np.outer(1 - t, 1 - t) - ell[:, None] - 1 / (4 * n * n)
        return (-val).reshape(-1)

    def rows(self, idx, x):
        lay = self.lay
        n = lay.n
        idx = np.asarray(idx)
        i, j = idx // (n + 1), idx % (n + 1)
        t = lay.grid
        A = np.zeros((len(idx), lay.num_vars))
        ar = np.arange(len(idx))
        A[ar, lay.L[i]] = 1.0
        A[:, lay.G] = -lay.Wpre[i] - lay.Wpre[j]
        b = (1 - t[i]) * (1 - t[j]) - 1 / (4 * n * n)
        return A, b


class WaterLevelRows(ConstraintFamily):
    """``r + 1/(4n^2) <= ell(p) + int_0^p f + int_0^q f - (1-p) f(q)``."""

    name = "water-level"

    def __init__(self, lay: _BalancedLayout):
        self.lay = lay

    def count(self):
        return (self.lay.n + 1) ** 2

    def residuals(self, x):
        lay = self.lay
        n = lay.n
        f, _, ell, r = lay.unpack(x)
        Pf = lay.Wpre @ f
        t = lay.grid
        val = (ell + Pf)[:, None] + Pf[None, :] - np.outer(1 - t, f) - r - 1 / (4 * n * n)
        return (-val).reshape(-1)

    def rows(self, idx, x):
        lay = self.lay
        n = lay.n
        idx = np.asarray(idx)
        p, q = idx // (n + 1), idx % (n + 1)
        t = lay.grid
        A = np.zeros((len(idx), lay.num_vars))
        ar = np.arange(len(idx))
        A[:, lay.R] = 1.0
        A[ar, lay.L[p]] -= 1.0
        coef_f = -lay.Wpre[p] - lay.Wpre[q]
        coef_f[ar, q] += 1 - t[p]
        A[:, lay.F] += coef_f
        b = np.full(len(idx), -1 / (4 * n * n))
        return A, b


def _balanced_structural(lay: _BalancedLayout) -> DenseRows:
    n = lay.n
    F, G, L = lay.F, lay.G, lay.L
    rows: list[tuple[dict, float]] = []
    for i in range(n):
        rows.append(({F[i]: 1.0, F[i + 1]: -1.0}, 0.0))                  # f monotone
    for i in range(n):
        rows.append(({F[i + 1]: 1.0, F[i]: -1.0}, 1 / n))                 # f Lipschitz
    for i in range(n):
        rows.append(({G[i + 1]: 1.0, G[i]: -1.0}, 1 / n))                 # g Lipschitz
    for i in range(n):
        rows.append(({G[i]: 1.0, G[i + 1]: -1.0}, -1 / (100 * n)))        # g reverse Lipschitz
    rows.append(({F[0]: -1.0}, 0.0))
    rows.append(({G[0]: -1.0}, 0.0))
    rows.append(({F[n]: 1.0, G[n]: 1.0}, 1.0))
    for i in range(1, n):
        rows.append(({L[i]: 2.0, L[i - 1]: -1.0, L[i + 1]: -1.0}, 0.0))   # ell convex
    return DenseRows.from_sparse(lay.num_vars, rows, name="structure")


def build_balanced_lp(n: int) -> LinearProgram:
    """Factor-revealing LP for ``(f, g, ell)``; maximize the certified ratio ``r``."""
    if n < 2:
        raise ValueError("balanced LP needs n >= 2")
    lay = _BalancedLayout(n)
    c = np.zeros(lay.num_vars)
    c[lay.R] = 1.0
    lo = np.zeros(lay.num_vars)
    hi = np.ones(lay.num_vars)
    lo[lay.R] = -1.0
    lp = LinearProgram(c, lo, hi, [
        _balanced_structural(lay),
        RankingBoundRows(lay),
        RankingDegenerateRows(lay),
        WaterLevelRows(lay),
    ])
    lp.layout = lay
    return lp


class _EwfLayout:
    def __init__(self, n: int):
        self.n = n
        self.H = np.arange(n + 1)
        self.R = n + 1
        self.num_vars = n + 2
        self.grid = np.arange(n + 1) / n
        self.Wpre = _trapezoid_prefix_weights(n)


class VFirstRows(ConstraintFamily):
    """``r <= q h(q) - int_0^q h + 1 - q - 3/(4n^2)`` for grid ``q``."""

    name = "v-arrives-first"

    def __init__(self, lay: _EwfLayout):
        self.lay = lay

    def count(self):
        return self.lay.n + 1

    def residuals(self, x):
        lay = self.lay
        n = lay.n
        h, r = x[lay.H], x[lay.R]
        q = lay.grid
        val = q * h - lay.Wpre @ h + 1 - q - 3 / (4 * n * n) - r
        return -val

    def rows(self, idx, x):
        lay = self.lay
        n = lay.n
        idx = np.asarray(idx)
        q = lay.grid[idx]
        A = np.zeros((len(idx), lay.num_vars))
        ar = np.arange(len(idx))
        A[:, lay.R] = 1.0
        A[:, lay.H] = lay.Wpre[idx]
        A[ar, lay.H[idx]] -= q
        b = 1 - q - 3 / (4 * n * n)
        return A, b


class UFirstRows(ConstraintFamily):
    """``r <= H(q) + H(p) + int_0^{1-q} h + (1 - h(q + 1/n))(1 - p) - 7/(4n^2)`` with ``h(1 + 1/n) = 1``."""

    name = "u-arrives-first"

    def __init__(self, lay: _EwfLayout):
        self.lay = lay

    def count(self):
        return (self.lay.n + 1) ** 2

    def residuals(self, x):
        lay = self.lay
        n = lay.n
        h, r = x[lay.H], x[lay.R]
        t = lay.grid
        Ph = lay.Wpre @ h
        H = t * h - Ph
        h_next = np.append(h[1:], 1.0)
        val = ((H + Ph[::-1])[:, None] + H[None, :]
               + np.outer(1 - h_next, 1 - t) - 7 / (4 * n * n) - r)
        return (-val).reshape(-1)

    def rows(self, idx, x):
        lay = self.lay
        n = lay.n
        idx = np.asarray(idx)
        i, j = idx // (n + 1), idx % (n + 1)
        t = lay.grid
        A = np.zeros((len(idx), lay.num_vars))
        ar = np.arange(len(idx))
        A[:, lay.R] = 1.0
        coef = lay.Wpre[i] + lay.Wpre[j] - lay.Wpre[n - i]
        coef[ar, i] -= t[i]
        coef[ar, j] -= t[j]
        inner = i < n
        coef[ar[inner], i[inner] + 1] += 1 - t[j[inner]]
        A[:, lay.H] = coef
        b = np.where(inner, 1 - t[j], 0.0) - 7 / (4 * n * n)
        return A, b


def _ewf_structural(lay: _EwfLayout, min_step: float) -> DenseRows:
    n = lay.n
    H = lay.H
    rows: list[tuple[dict, float]] = []
    for i in range(n):
        rows.append(({H[i]: 1.0, H[i + 1]: -1.0}, -min_step))   # strictly increasing
    for i in range(n):
        rows.append(({H[i + 1]: 1.0, H[i]: -1.0}, 2 / n))       # step bound 2/n
    return DenseRows.from_sparse(lay.num_vars, rows, name="structure")


def build_ewf_lp(n: int, min_step: float = EWF_MIN_STEP) -> LinearProgram:
    """Factor-revealing LP for ``h = f^{-1}``; maximize the certified ratio ``r``."""
    if n < 2:
        raise ValueError("EWF LP needs n >= 2")
    lay = _EwfLayout(n)
    c = np.zeros(lay.num_vars)
    c[lay.R] = 1.0
    lo = np.zeros(lay.num_vars)
    hi = np.ones(lay.num_vars)
    hi[0] = 0.0
    lo[n] = 1.0
    lo[lay.R] = -1.0
    lp = LinearProgram(c, lo, hi, [_ewf_structural(lay, min_step), VFirstRows(lay), UFirstRows(lay)])
    lp.layout = lay
    return lp


# ---------------------------------------------------------------- synthesis


def _coarse_seed(lp_fine: LinearProgram, x_coarse: np.ndarray, lay_coarse) -> tuple[np.ndarray, np.ndarray]:
    """Cuts active at the fine-grid interpolation of a coarse solution."""
    n = lp_fine.layout.n
    fine = np.arange(n + 1) / n
    x = np.zeros(lp_fine.num_vars)
    if isinstance(lay_coarse, _EwfLayout):
        h = np.interp(fine, lay_coarse.grid, x_coarse[lay_coarse.H])
        x[lp_fine.layout.H] = h
        x[lp_fine.layout.R] = x_coarse[lay_coarse.R]
    else:
        for name in ("F", "G", "L"):
            x[getattr(lp_fine.layout, name)] = np.interp(fine, lay_coarse.grid, x_coarse[getattr(lay_coarse, name)])
        x[lp_fine.layout.R] = x_coarse[lay_coarse.R]
    A_parts, b_parts = [], []
    for fam in lp_fine.families:
        if isinstance(fam, DenseRows):
            continue
        r = fam.residuals(x)
        idx = np.flatnonzero(r > -1e-4)
        if idx.size > 4 * lp_fine.num_vars:
            idx = np.sort(np.argsort(-r, kind="stable")[: 4 * lp_fine.num_vars])
        if idx.size:
            A, b = fam.rows(idx, x)
            A_parts.append(A)
            b_parts.append(b)
    if not A_parts:
        return np.zeros((0, lp_fine.num_vars)), np.zeros(0)
    return np.vstack(A_parts), np.concatenate(b_parts)


def _solve_with_ladder(build, n: int, tol: float, coarse: int | None) -> LpSolution:
    seed = None
    if coarse and coarse < n:
        lp_c = build(coarse)
        sol_c = solve(lp_c, tol, verify_solution=False)
        if sol_c.status is LpStatus.OPTIMAL:
            lp = build(n)
            seed = _coarse_seed(lp, sol_c.x, lp_c.layout)
    lp = build(n)
    return lp, solve(lp, tol, seed_rows=seed)


def synthesize_balanced(n: int = 100, tol: float = 1e-9, coarse: int | None = None):
    """Solve the balanced LP; returns ``(BalancedFunctions, LpSolution)``."""
    lp, sol = _solve_with_ladder(build_balanced_lp, n, tol, coarse)
    if sol.status is not LpStatus.OPTIMAL:
        return None, sol
    f, g, ell, r = lp.layout.unpack(sol.x)
    funcs = BalancedFunctions(PiecewiseLinear(f), PiecewiseLinear(g), PiecewiseLinear(ell),
                              gamma=min(float(r), BALANCED_GAMMA))
    return funcs, sol


def synthesize_ewf(n: int = 1000, tol: float = 1e-9, coarse: int | None = None):
    """Solve the EWF LP; returns ``(EwfFunction, LpSolution)``."""
    lp, sol = _solve_with_ladder(build_ewf_lp, n, tol, coarse)
    if sol.status is not LpStatus.OPTIMAL:
        return None, sol
    h = sol.x[lp.layout.H].copy()
    h[0], h[-1] = 0.0, 1.0
    return EwfFunction(PiecewiseLinear(h), gamma=min(float(sol.x[lp.layout.R]), EWF_GAMMA)), sol


# ---------------------------------------------------------------- continuous checks


def _off_grid(rng, size, n):
    x = rng.random(size)
    on = np.isclose(x * n, np.round(x * n), rtol=0, atol=1e-12)
    while np.any(on):
        x[on] = rng.random(int(on.sum()))
        on = np.isclose(x * n, np.round(x * n), rtol=0, atol=1e-12)
    return x


def verify_continuous(funcs: BalancedFunctions, num_samples: int = 100_000, seed: int = 0,
                      grid_only: bool = False) -> dict:
    """Minimum margin of each continuous constraint family over random points."""
    rng = np.random.default_rng(seed)
    n = funcs.n
    if grid_only:
        def draw(size):
            return rng.integers(0, n + 1, size) / n
        tau, gam = draw(num_samples), draw(num_samples)
        th = rng.integers(0, n, num_samples) / n
        th = np.maximum(th, gam)
        keep = th < 1
        tau1, gam1, th1 = tau[keep], gam[keep], th[keep]
        tau2, gam2 = draw(num_samples), draw(num_samples)
        p, q = draw(num_samples), draw(num_samples)
    else:
        tau1, gam1 = _off_grid(rng, num_samples, n), _off_grid(rng, num_samples, n)
        th1 = gam1 + (1 - gam1) * _off_grid(rng, num_samples, n)
        th1 = np.minimum(th1, np.nextafter(1.0, 0.0))
        tau2, gam2 = _off_grid(rng, num_samples, n), _off_grid(rng, num_samples, n)
        p, q = _off_grid(rng, num_samples, n), _off_grid(rng, num_samples, n)
    m1 = big_g(funcs, tau1, gam1, th1) - funcs.ell(tau1)
    m2 = big_g2(funcs, tau2, gam2) - funcs.ell(tau2)
    m3 = funcs.ell(p) + big_f(funcs, p, q) - funcs.gamma
    report = {}
    for name, m, pts in (("ranking-bound", m1, (tau1, gam1, th1)),
                         ("ranking-degenerate", m2, (tau2, gam2)),
                         ("water-level", m3, (p, q))):
        k = int(np.argmin(m))
        report[name] = {"min_margin": float(m[k]), "at": [float(a[k]) for a in pts], "samples": int(m.size)}
    report["min_margin"] = min(v["min_margin"] for v in report.values())
    report["gamma"] = funcs.gamma
    report["seed"] = seed
    return report


def verify_ewf_continuous(fn: EwfFunction, num_samples: int = 100_000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    n = fn.h.n
    h = fn.h
    q = _off_grid(rng, num_samples, n)
    qu, qv = _off_grid(rng, num_samples, n), _off_grid(rng, num_samples, n)
    m1 = ewf_v_first(h, q) - fn.gamma
    m2 = ewf_u_first(h, qu, qv) - fn.gamma
    report = {}
    for name, m, pts in (("v-arrives-first", m1, (q,)), ("u-arrives-first", m2, (qu, qv))):
        k = int(np.argmin(m))
        report[name] = {"min_margin": float(m[k]), "at": [float(a[k]) for a in pts], "samples": int(m.size)}
    report["min_margin"] = min(v["min_margin"] for v in report.values())
    report["gamma"] = fn.gamma
    report["seed"] = seed
    return report


# ---------------------------------------------------------------- table files


def write_table(path, kind: str, fn: PiecewiseLinear, gamma: float) -> None:
    buf = io.StringIO()
    buf.write(f"# kind={kind} n={fn.n} gamma={gamma:.17g}\n")
    for i, v in enumerate(fn.values):
        buf.write(f"{i},{v:.17g}\n")
    Path(path).write_text(buf.getvalue())


def read_table(path) -> tuple[str, PiecewiseLinear, float]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise TableFormatError(f"{path}:1: missing header")
    try:
        meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        kind, n, gamma = meta["kind"], int(meta["n"]), float(meta["gamma"])
    except KeyError as e:
        raise TableFormatError(f"{path}:1: header lacks {e.args[0]}") from None
    except ValueError:
        raise TableFormatError(f"{path}:1: malformed header") from None
    vals = np.empty(n + 1)
    seen = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        i_s, _, v_s = line.partition(",")
        try:
            i, val = int(i_s), float(v_s)
        except ValueError:
            raise TableFormatError(f"{path}:{lineno}: expected i,value") from None
        if i != seen:
            raise TableFormatError(f"{path}:{lineno}: expected index {seen}, got {i}")
        vals[i] = val
        seen += 1
    if seen != n + 1:
        raise TableFormatError(f"{path}: expected {n + 1} values, got {seen}")
    return kind, PiecewiseLinear(vals), gamma


def save_balanced(funcs: BalancedFunctions, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for kind in ("f", "g", "ell"):
        write_table(d / f"balanced_{kind}.csv", kind, getattr(funcs, kind), funcs.gamma)


def load_balanced(directory) -> BalancedFunctions:
    d = Path(directory)
    parts = {}
    gamma = None
    for kind in ("f", "g", "ell"):
        k, fn, gm = read_table(d / f"balanced_{kind}.csv")
        if k != kind:
            raise TableFormatError(f"balanced_{kind}.csv declares kind={k}")
        parts[kind] = fn
        gamma = gm
    return BalancedFunctions(parts["f"], parts["g"], parts["ell"], gamma)


def save_ewf(fn: EwfFunction, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_table(d / "ewf_h.csv", "h", fn.h, fn.gamma)


def load_ewf(directory) -> EwfFunction:
    k, h, gamma = read_table(Path(directory) / "ewf_h.csv")
    if k != "h":
        raise TableFormatError(f"ewf_h.csv declares kind={k}")
    return EwfFunction(h, gamma)
