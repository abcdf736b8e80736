import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fomatch.dualfuncs import (BalancedFunctions, EwfFunction, LinearSpline, PiecewiseLinear,
                               TableFormatError, big_f, big_g, big_g2, big_h_interpolation_gap,
                               build_balanced_lp, build_ewf_lp, eval_pl, ewf_u_first, ewf_v_first,
                               integral_interpolation_gap, invert, load_balanced, load_ewf,
                               prefix_integral, read_table, save_balanced, save_ewf, verify_continuous,
                               verify_ewf_continuous, write_table)
from fomatch.lp import verify


def simpson(fn, a, b, points=10_001):
    """Composite Simpson on each linear piece between ``a`` and ``b``."""
    cuts = np.unique(np.concatenate([[a, b], fn.knots[(fn.knots > a) & (fn.knots < b)]]))
    total = 0.0
    per = max(2, (points // max(1, len(cuts) - 1)) // 2 * 2)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        x = np.linspace(lo, hi, per + 1)
        y = np.array([fn(float(v)) for v in x]) if per < 4 else fn(x)
        w = np.ones(per + 1)
        w[1:-1:2], w[2:-1:2] = 4, 2
        total += (hi - lo) / per / 3 * float(w @ y)
    return total


def midpoint(func, a, b, m=10_000):
    if b <= a:
        return 0.0
    x = a + (np.arange(m) + 0.5) * (b - a) / m
    return float(np.sum(func(x)) * (b - a) / m)


# ---------------------------------------------------------------- splines


def test_eval_examples():
    fn = PiecewiseLinear([0.0, 0.4, 1.0])
    assert eval_pl(fn, 0.25) == pytest.approx(0.2)
    rng = np.random.default_rng(0)
    vals = rng.random(11)
    g = PiecewiseLinear(vals)
    for i in range(11):
        assert g(i / 10) == vals[i]
    assert g(1.0) == vals[10]


def test_domain_errors():
    fn = PiecewiseLinear([0.0, 1.0])
    for bad in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            fn(bad)
        with pytest.raises(ValueError):
            fn.prefix_integral(bad)


def test_prefix_integral_examples():
    ident = PiecewiseLinear(np.arange(11) / 10)
    assert prefix_integral(ident, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert prefix_integral(PiecewiseLinear([0.3, 0.9, 0.1]), 0.0) == 0.0
    # trapezoid identity on grid points
    v = np.array([0.2, 0.5, 0.1, 0.9])
    fn = PiecewiseLinear(v)
    assert fn.prefix_integral(2 / 3) == pytest.approx((v[0] + v[1]) / 6 + (v[1] + v[2]) / 6)


def test_prefix_integral_matches_simpson():
    rng = np.random.default_rng(1)
    for n in (3, 10, 37):
        fn = PiecewiseLinear(rng.random(n + 1))
        for t in rng.random(20):
            assert fn.prefix_integral(t) == pytest.approx(simpson(fn, 0.0, t), abs=1e-9)


def test_general_spline_matches_simpson():
    rng = np.random.default_rng(2)
    knots = np.concatenate([[0.0], np.sort(rng.random(8)), [1.0]])
    fn = LinearSpline(knots, rng.random(10))
    for t in rng.random(20):
        assert fn.prefix_integral(t) == pytest.approx(simpson(fn, 0.0, t), abs=1e-9)


def test_invert_examples():
    ident = invert(PiecewiseLinear([0.0, 0.5, 1.0]))
    xs = np.linspace(0, 1, 101)
    assert np.allclose(ident(xs), xs, atol=1e-15)
    f = invert(PiecewiseLinear([0.0, 0.25, 1.0]))
    assert f(0.25) == pytest.approx(0.5)
    assert f(0.625) == pytest.approx(0.75)


def test_invert_roundtrip():
    rng = np.random.default_rng(3)
    steps = rng.random(50) + 0.01
    h = PiecewiseLinear(np.concatenate([[0.0], np.cumsum(steps) / steps.sum()]))
    h.values[-1] = 1.0
    f = invert(h)
    x = rng.random(10_000)
    assert np.max(np.abs(f(h(x)) - x)) <= 1e-12
    assert np.max(np.abs(h(f(x)) - x)) <= 1e-12


def test_invert_rejects_bad_input():
    with pytest.raises(ValueError):
        invert(PiecewiseLinear([0.0, 0.6, 0.5, 1.0]))
    with pytest.raises(ValueError):
        invert(PiecewiseLinear([0.1, 0.5, 1.0]))


# ---------------------------------------------------------------- bound functions


def _ranked_funcs(n=10, seed=0):
    rng = np.random.default_rng(seed)
    g = np.cumsum(rng.uniform(1 / (100 * n), 1 / n, n + 1)) * 0.6
    f = np.cumsum(rng.uniform(0, 1 / n, n + 1)) * 0.3
    return BalancedFunctions(PiecewiseLinear(f), PiecewiseLinear(g), PiecewiseLinear(np.zeros(n + 1)), 0.5)


def test_big_g_degenerate_examples():
    funcs = _ranked_funcs()
    assert big_g(funcs, 0.0, 0.0, 1.0) == pytest.approx(1.0)
    for th in (0.0, 0.3, 0.77):
        assert big_g(funcs, 0.0, 0.0, th) == pytest.approx(1 - (1 - th) * funcs.g(th))
    assert big_g(funcs, 0.3, 0.4, 1.0) == pytest.approx(big_g2(funcs, 0.3, 0.4))


def test_big_g_matches_quadrature():
    rng = np.random.default_rng(4)
    for seed in range(3):
        funcs = _ranked_funcs(n=7 + seed, seed=seed)
        g = funcs.g
        for _ in range(300 if seed else 400):
            tau, gam = rng.random(2)
            th = gam + (1 - gam) * rng.random()
            c = 1 - g(th)
            oracle = (midpoint(g, 0, tau) + midpoint(g, 0, gam)
                      + (1 - tau) * (1 - gam - (1 - th) * g(th))
                      + gam * midpoint(lambda y: np.minimum(c, g(y)), tau, 1.0))
            assert big_g(funcs, tau, gam, th) == pytest.approx(oracle, abs=1e-6)


def test_big_g_requires_theta_at_least_gamma():
    with pytest.raises(ValueError):
        big_g(_ranked_funcs(), 0.1, 0.5, 0.4)


def test_big_f_examples_and_monotonicity():
    funcs = _ranked_funcs()
    zero_f = dataclasses.replace(funcs, f=PiecewiseLinear(funcs.f.values - funcs.f.values[0]))
    assert big_f(zero_f, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    for xv in (0.0, 0.4, 1.0):
        assert big_f(funcs, 1.0, xv) == pytest.approx(funcs.f.prefix_integral(1.0) + funcs.f.prefix_integral(xv))
    rng = np.random.default_rng(5)
    a, b, q = rng.random((3, 1000))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(big_f(funcs, lo, q) <= big_f(funcs, hi, q) + 1e-15)


def test_ewf_bound_examples(ewf):
    assert ewf_v_first(ewf.h, 0.0) == pytest.approx(1.0)
    assert ewf_v_first(ewf.h, 1.0) == pytest.approx(1.0 - ewf.h.prefix_integral(1.0))
    assert ewf_v_first(ewf.h, 1.0) >= ewf.gamma
    # u-first bound at the corner: H(0) + H(0) + int_0^1 h + 1
    assert ewf_u_first(ewf.h, 0.0, 0.0) == pytest.approx(ewf.h.prefix_integral(1.0) + 1.0)


# ---------------------------------------------------------------- interpolation gaps


@st.composite
def lipschitz_monotone(draw, slope_max):
    n = draw(st.integers(2, 40))
    steps = draw(st.lists(st.floats(1e-6, slope_max), min_size=n, max_size=n))
    return n, np.concatenate([[0.0], np.cumsum(steps) / n])


@settings(max_examples=60, deadline=None)
@given(lipschitz_monotone(1.0), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_integral_interpolation_gap_range(case, ts):
    n, vals = case
    fn = PiecewiseLinear(vals)
    gap = integral_interpolation_gap(fn, np.array(ts))
    assert np.all(gap <= 1e-15)
    assert np.all(gap >= -1 / (8 * n * n) - 1e-15)


@settings(max_examples=60, deadline=None)
@given(lipschitz_monotone(2.0), st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_big_h_interpolation_gap_range(case, qs):
    n, vals = case
    h = PiecewiseLinear(vals)
    q = np.array(qs)
    gap = big_h_interpolation_gap(h, q)
    assert np.all(gap >= -3 / (4 * n * n) - 1e-15)
    off = np.abs(q * n - np.round(q * n)) > 1e-6
    assert np.all(gap[off] < 0)


# ---------------------------------------------------------------- LP construction


def test_balanced_lp_shape():
    lp = build_balanced_lp(2)
    assert lp.num_vars == 10
    with pytest.raises(ValueError):
        build_balanced_lp(1)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_ranking_bound_row_count(n):
    grid = [(i, j, k) for i in range(n + 1) for k in range(n + 1) for j in range(n + 1)
            if j <= k + 1 <= n]
    fam = build_balanced_lp(n).families[1]
    assert fam.name == "ranking-bound"
    assert fam.count() == len(grid)


def test_ewf_lp_shape():
    lp = build_ewf_lp(2)
    assert lp.num_vars == 4
    assert lp.lower[0] == lp.upper[0] == 0.0
    assert lp.lower[2] == lp.upper[2] == 1.0
    with pytest.raises(ValueError):
        build_ewf_lp(1)


def test_ewf_q1_row():
    n = 5
    lp = build_ewf_lp(n)
    fam = lp.families[1]
    rng = np.random.default_rng(6)
    x = np.concatenate([[0.0], np.sort(rng.random(n - 1)), [1.0], [0.4]])
    A, b = fam.rows(np.array([n]), x)
    h = PiecewiseLinear(x[:n + 1])
    expected = x[-1] - (1.0 * h(1.0) - h.prefix_integral(1.0) + 0 - 3 / (4 * n * n))
    assert float(A[0] @ x - b[0]) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("build, n", [(build_balanced_lp, 4), (build_balanced_lp, 7),
                                      (build_ewf_lp, 5), (build_ewf_lp, 9)])
def test_residuals_agree_with_rows(build, n):
    lp = build(n)
    rng = np.random.default_rng(n)
    for _ in range(5):
        x = rng.random(lp.num_vars)
        for fam in lp.families:
            idx = np.arange(fam.count())
            A, b = fam.rows(idx, x)
            assert np.allclose(fam.residuals(x), A @ x - b, atol=1e-13)


def _balanced_values(funcs):
    lay = build_balanced_lp(funcs.n).layout
    x = np.zeros(lay.num_vars)
    x[lay.F], x[lay.G], x[lay.L], x[lay.R] = funcs.f.values, funcs.g.values, funcs.ell.values, funcs.gamma
    return x


def test_shipped_balanced_tables_feasible(balanced):
    assert balanced.n == 100
    assert balanced.invariant_violations() == []
    assert verify(build_balanced_lp(100), _balanced_values(balanced)) <= 1e-6


def test_shipped_ewf_tables_feasible(ewf):
    assert ewf.h.n == 1000
    x = np.append(ewf.h.values, ewf.gamma)
    assert verify(build_ewf_lp(1000), x) <= 1e-6


# ---------------------------------------------------------------- continuous checks


def test_continuous_margins(balanced):
    rep = verify_continuous(balanced, 20_000, seed=1)
    assert rep["min_margin"] >= -1e-9


def test_grid_margins_cover_slack(balanced):
    n = balanced.n
    rep = verify_continuous(balanced, 20_000, seed=2, grid_only=True)
    assert rep["ranking-bound"]["min_margin"] >= 1 / (2 * n * n) - 1e-9
    assert rep["ranking-degenerate"]["min_margin"] >= 1 / (4 * n * n) - 1e-9
    assert rep["water-level"]["min_margin"] >= 1 / (4 * n * n) - 1e-9


def test_corrupted_g_is_reported(balanced):
    vals = balanced.g.values.copy()
    vals[30] = -0.1
    bad = dataclasses.replace(balanced, g=PiecewiseLinear(vals))
    rep = verify_continuous(bad, 20_000, seed=3)
    assert rep["min_margin"] < 0
    assert bad.invariant_violations()


def test_ewf_continuous_margins(ewf):
    rep = verify_ewf_continuous(ewf, 20_000, seed=1)
    assert rep["min_margin"] >= -1e-9


def test_corrupted_h_is_reported(ewf):
    vals = ewf.h.values.copy()
    vals[400:600] += 0.2
    rep = verify_ewf_continuous(EwfFunction(PiecewiseLinear(vals), ewf.gamma), 20_000, seed=2)
    assert rep["min_margin"] < 0


# ---------------------------------------------------------------- table files


def test_table_roundtrip_bit_exact(tmp_path, balanced, ewf):
    save_balanced(balanced, tmp_path)
    save_ewf(ewf, tmp_path)
    back = load_balanced(tmp_path)
    assert np.array_equal(back.f.values, balanced.f.values)
    assert np.array_equal(back.g.values, balanced.g.values)
    assert np.array_equal(back.ell.values, balanced.ell.values)
    assert back.gamma == balanced.gamma
    assert np.array_equal(load_ewf(tmp_path).h.values, ewf.h.values)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e100, 1e100), min_size=2, max_size=20),
       st.floats(0, 1))
def test_write_read_table_property(tmp_path_factory, vals, gamma):
    p = tmp_path_factory.mktemp("t") / "x.csv"
    write_table(p, "f", PiecewiseLinear(vals), gamma)
    kind, fn, gm = read_table(p)
    assert kind == "f" and gm == gamma
    assert np.array_equal(fn.values, np.array(vals))


@pytest.mark.parametrize("text, needle", [
    ("0,1\n1,2\n", "missing header"),
    ("# kind=f n=2\n0,1\n", "gamma"),
    ("# kind=f n=1 gamma=0.5\n0,1\n2,3\n", "expected index 1"),
    ("# kind=f n=1 gamma=0.5\n0,1\n1,abc\n", "expected i,value"),
    ("# kind=f n=2 gamma=0.5\n0,1\n1,2\n", "expected 3 values"),
])
def test_table_parse_errors(tmp_path, text, needle):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(TableFormatError, match=needle):
        read_table(p)
