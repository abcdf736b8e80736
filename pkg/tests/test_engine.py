import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fomatch.dualfuncs import LinearSpline, PiecewiseLinear
from fomatch.engine import (ACTIVE, PASSIVE, OfferTable, OfferTableError, compute_offer_tables,
                            default_g, estimate_water_levels, kernels, ledger_bound,
                            run_balanced_ranking, run_eager_waterfilling, run_ranking,
                            run_waterfilling, simulate_batch)
from fomatch.instance import ARRIVAL, DEADLINE, Instance, from_edges, generate_random

A, D = ARRIVAL, DEADLINE
IDENTITY = LinearSpline([0.0, 1.0], [0.0, 1.0])


def single_edge():
    return from_edges(2, [(0, 1)], [(A, 0), (A, 1), (D, 0), (D, 1)])


class _Funcs:
    """Minimal stand-in exposing ``g`` and ``f`` like ``BalancedFunctions``."""

    def __init__(self, g=default_g, f=None):
        self.g = g
        self.f = f if f is not None else PiecewiseLinear(np.linspace(0, 0.3, 11))


# ---------------------------------------------------------------- Ranking


def test_ranking_single_edge():
    run = run_ranking(single_edge(), [0.3, 0.8])
    assert run.matching() == [(0, 1)]
    assert run.alpha.sum() == pytest.approx(1.0)
    assert run.role[0] == ACTIVE and run.role[1] == PASSIVE
    assert run.alpha[1] == pytest.approx(math.exp(0.8 - 1))


def test_ranking_isolated_vertex():
    run = run_ranking(from_edges(1, []), [0.5])
    assert run.size == 0 and run.alpha[0] == 0.0


def test_ranking_star():
    # center 0 arrives first, every leaf arrives and reaches its deadline at once
    tl = [(A, 0), (A, 1), (D, 1), (A, 2), (D, 2), (A, 3), (D, 3), (D, 0)]
    inst = from_edges(4, [(0, 1), (0, 2), (0, 3)], tl)
    for ranks in ([0.1, 0.2, 0.3, 0.4], [0.9, 0.5, 0.1, 0.2]):
        run = run_ranking(inst, ranks)
        assert run.matching() == [(0, 1)]


def test_ranking_picks_lowest_rank():
    inst = from_edges(3, [(0, 1), (0, 2)], [(A, 0), (A, 1), (A, 2), (D, 0), (D, 1), (D, 2)])
    assert run_ranking(inst, [0.5, 0.7, 0.2]).matching() == [(0, 2)]
    assert run_ranking(inst, [0.5, 0.1, 0.2]).matching() == [(0, 1)]


# ---------------------------------------------------------------- Balanced Ranking


def test_balanced_single_edge():
    inst = single_edge()
    tab = OfferTable({(0, 1): 0.2}, 0.03, 1, 0)
    run = run_balanced_ranking(inst, _Funcs(), tab, [0.4, 0.6])
    assert run.matching() == [(0, 1)]
    assert run.alpha.sum() == pytest.approx(1.0)
    assert run.alpha[1] == pytest.approx(math.exp(-0.4) + 0.2)


def test_balanced_argmax_and_ties():
    inst = from_edges(3, [(0, 1), (0, 2)], [(A, 0), (A, 1), (A, 2), (D, 0), (D, 1), (D, 2)])
    g = lambda y: np.asarray(y, dtype=float)  # noqa: E731
    tab = OfferTable({(0, 1): 0.1, (0, 2): 0.3}, 0.03, 1, 0)
    # g1 + f1 = 0.6 < g2 + f2 = 0.7
    assert run_balanced_ranking(inst, _Funcs(g), tab, [0.0, 0.5, 0.4]).matching() == [(0, 1)]
    # equal scores: smaller id wins
    tab = OfferTable({(0, 1): 0.25, (0, 2): 0.0}, 0.03, 1, 0)
    assert run_balanced_ranking(inst, _Funcs(g), tab, [0.0, 0.25, 0.5]).matching() == [(0, 1)]


def test_balanced_missing_entry():
    with pytest.raises(OfferTableError):
        run_balanced_ranking(single_edge(), _Funcs(), OfferTable({}, 0.03, 1, 0), [0.1, 0.2])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_zero_tables_reproduce_ranking(seed):
    inst = generate_random(int(np.random.default_rng(seed).integers(1, 12)), 0.4, seed=seed)
    ranks = np.random.default_rng(seed + 1).random(inst.n)
    a = run_ranking(inst, ranks)
    b = run_balanced_ranking(inst, _Funcs(), OfferTable.zeros(inst), ranks)
    assert a.decisions == b.decisions
    assert np.array_equal(a.alpha, b.alpha)


def _check_integral_run(inst: Instance, run):
    assert math.fsum(run.alpha) == pytest.approx(run.size, abs=1e-12)
    assert np.all(run.alpha >= -1e-15) and np.all(run.alpha <= 1 + 1e-15)
    for u, p in enumerate(run.partner):
        if p >= 0:
            assert run.partner[p] == u and p in inst.neighbors(u)
    for t, u, v in run.decisions:
        assert inst.timeline[t] == (D, u)
        assert inst.arrival_time(v) < t < inst.deadline_time(v)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.booleans())
def test_integral_run_invariants(seed, balanced):
    rng = np.random.default_rng(seed)
    inst = generate_random(int(rng.integers(1, 14)), float(rng.uniform(0.1, 0.7)), seed=seed)
    ranks = rng.random(inst.n)
    if balanced:
        # offers <= 0.3 and g <= 0.7 keep f(1) + g(1) <= 1
        entries = {(u, v): float(rng.uniform(0, 0.3)) for u in range(inst.n) for v in inst.neighbors(u)}
        g = lambda y: 0.7 * default_g(y)  # noqa: E731
        run = run_balanced_ranking(inst, _Funcs(g), OfferTable(entries, 0.03, 1, 0), ranks)
    else:
        run = run_ranking(inst, ranks)
    _check_integral_run(inst, run)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
def test_batch_kernel_matches_single_runs(backend):
    rng = np.random.default_rng(9)
    for seed in range(15):
        inst = generate_random(int(rng.integers(2, 12)), 0.4, seed=seed)
        entries = {(u, v): float(rng.uniform(0, 0.3)) for u in range(inst.n) for v in inst.neighbors(u)}
        tab = OfferTable(entries, 0.03, 1, 0)
        ranks = rng.random((40, inst.n))
        for tables in (None, tab):
            batch = simulate_batch(inst, default_g(ranks), tables, backend=backend)
            for s in range(40):
                single = (run_ranking(inst, ranks[s]) if tables is None
                          else run_balanced_ranking(inst, _Funcs(), tab, ranks[s]))
                assert np.array_equal(batch.partner[s], single.partner)
                assert np.array_equal(batch.role[s], single.role)
                assert np.allclose(batch.alpha[s], single.alpha, atol=1e-15)


def test_backends_agree_with_stop():
    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled kernel not built")
    inst = generate_random(10, 0.5, seed=4)
    gy = default_g(np.random.default_rng(0).random((500, inst.n)))
    for stop in (3, 9, 15):
        a = simulate_batch(inst, gy, stop=stop, backend="python")
        b = simulate_batch(inst, gy, stop=stop, backend="compiled")
        assert np.array_equal(a.partner, b.partner) and np.array_equal(a.alpha, b.alpha)


# ---------------------------------------------------------------- offer tables


def test_offer_table_two_vertices():
    funcs = _Funcs()
    tab = compute_offer_tables(single_edge(), funcs, epsilon=0.03, samples=2000, seed=1)
    f1 = funcs.f(1.0)
    assert f1 <= tab.get(0, 1) <= f1 + 0.03
    assert (1, 0) not in tab.entries


def test_offer_table_absent_for_non_neighbours_and_deterministic():
    inst = generate_random(7, 0.4, seed=5)
    a = compute_offer_tables(inst, _Funcs(), samples=2000, seed=3)
    b = compute_offer_tables(inst, _Funcs(), samples=2000, seed=3)
    assert a.entries == b.entries
    for u, v in a.entries:
        assert v in inst.neighbors(u)


def test_offer_table_matches_independent_estimate():
    funcs = _Funcs(f=PiecewiseLinear(np.linspace(0, 0.4, 11)))
    eps = 0.03
    for seed in range(4):
        inst = generate_random(7, 0.5, bipartite=True, seed=seed)
        tab = compute_offer_tables(inst, funcs, epsilon=eps, samples=20_000, seed=seed)
        est = estimate_water_levels(inst, funcs, tab, trials=40_000, seed=seed + 100)
        for (u, v), fh in tab.entries.items():
            fx = funcs.f(min(1.0, est.lookahead[u, v]))
            slack = 4 * est.lookahead_se[u, v] + 4 * math.sqrt(0.25 / 20_000)
            assert fx - slack <= fh <= fx + eps + slack


def test_offer_table_budget_error():
    with pytest.raises(OfferTableError):
        compute_offer_tables(single_edge(), _Funcs(), epsilon=0.03, samples=100, max_rounds=1)


def test_offer_table_file_roundtrip(tmp_path):
    inst = generate_random(6, 0.5, seed=2)
    tab = compute_offer_tables(inst, _Funcs(), samples=1000, seed=0)
    tab.write(tmp_path / "t.csv")
    back = OfferTable.read(tmp_path / "t.csv")
    assert back.entries == tab.entries
    assert (back.epsilon, back.samples, back.seed) == (tab.epsilon, tab.samples, tab.seed)


# ---------------------------------------------------------------- water levels


def test_water_levels_simple_cases():
    est = estimate_water_levels(single_edge(), trials=500, seed=0)
    assert est.lookahead[0, 1] == 1.0 and est.lookahead_se[0, 1] == 0.0
    iso = estimate_water_levels(from_edges(1, []), trials=100, seed=0)
    assert iso.x[0] == 0.0


def test_water_levels_path_exact():
    # path 0 - 1 - 2, vertex 1's deadline first: 1 takes its lower-ranked neighbour
    inst = from_edges(3, [(0, 1), (1, 2)], [(A, 0), (A, 1), (A, 2), (D, 1), (D, 0), (D, 2)])
    exact = {0: 0.5, 1: 0.0, 2: 0.5}   # Pr[y_0 < y_2] = 1/2 over the 3! rank orders
    est = estimate_water_levels(inst, trials=20_000, seed=7)
    for v, p in exact.items():
        assert abs(est.x[v] - p) <= 3 * max(est.x_se[v], 1e-12)
    assert est.x[1] == 0.0


def test_water_levels_deterministic():
    inst = generate_random(8, 0.4, seed=1)
    a = estimate_water_levels(inst, trials=300, seed=5)
    b = estimate_water_levels(inst, trials=300, seed=5)
    assert np.array_equal(a.x, b.x) and a.lookahead == b.lookahead


# ---------------------------------------------------------------- Water-filling


def test_waterfilling_single_edge():
    f = PiecewiseLinear([0.0, 0.2, 0.7])
    run = run_waterfilling(single_edge(), f)
    assert run.x_edge[0, 1] == pytest.approx(1.0)
    assert run.alpha[1] == pytest.approx(f.prefix_integral(1.0))
    assert run.alpha[0] == pytest.approx(1 - f.prefix_integral(1.0))


def test_waterfilling_lowest_level_first():
    # vertex 3 pours into 2 and 4 first (levels 0.5 each); then 0 sees 1 at 0 and 2 at 0.5
    tl = [(A, v) for v in range(5)] + [(D, 3), (D, 0), (D, 1), (D, 2), (D, 4)]
    inst = from_edges(5, [(3, 2), (3, 4), (0, 1), (0, 2)], tl)
    run = run_waterfilling(inst, IDENTITY)
    segs = [s for s in run.trace if s.active == 0]
    assert segs[0].passive == (1,) and segs[0].level_start == 0 and segs[0].level_end == pytest.approx(0.5)
    assert segs[1].passive == (1, 2) and segs[1].level_end == pytest.approx(0.75)
    assert run.water[0] == pytest.approx(1.0)


def _check_fractional(inst, run):
    load = np.zeros(inst.n)
    for (u, v), x in run.x_edge.items():
        assert x >= 0
        load[u] += x
        load[v] += x
    assert np.allclose(load, run.water, atol=1e-12)
    assert np.all(run.water <= 1 + 1e-12)
    assert run.dual_total == pytest.approx(run.value, abs=1e-9)
    for s in run.trace:
        assert s.level_end >= s.level_start


def test_waterfilling_deadline_postcondition():
    for seed in range(50):
        inst = generate_random(12, 0.3, seed=seed)
        for cut in range(len(inst.timeline)):
            kind, u = inst.timeline[cut]
            if kind != DEADLINE:
                continue
            prefix = Instance(inst.n, inst.edges, inst.timeline[:cut + 1])
            run = run_waterfilling(prefix, IDENTITY)
            done = {w for k, w in inst.timeline[:cut] if k == DEADLINE}
            nbrs = [v for v in inst.neighbors(u) if v not in done]
            assert run.water[u] >= 1 - 1e-12 or all(run.water[v] >= 1 - 1e-12 for v in nbrs)
        _check_fractional(inst, run_waterfilling(inst, IDENTITY))


def test_waterfilling_ignores_arrival_order():
    rng = np.random.default_rng(0)
    for seed in range(20):
        inst = generate_random(10, 0.4, seed=seed)
        deadlines = [e for e in inst.timeline if e[0] == DEADLINE]
        arrivals = [(A, int(v)) for v in rng.permutation(inst.n)]
        a = run_waterfilling(Instance(inst.n, inst.edges, tuple(arrivals + deadlines)), IDENTITY)
        arrivals = [(A, int(v)) for v in rng.permutation(inst.n)]
        b = run_waterfilling(Instance(inst.n, inst.edges, tuple(arrivals + deadlines)), IDENTITY)
        assert np.allclose(a.alpha, b.alpha, atol=1e-15) and a.x_edge == b.x_edge


# ---------------------------------------------------------------- Eager Water-filling


def test_ewf_single_edge(small_ewf):
    f = small_ewf.f
    run = run_eager_waterfilling(single_edge(), f)
    assert run.level_after_arrival[1] == pytest.approx(small_ewf.h(0.5), abs=1e-12)
    assert run.x_edge[0, 1] == pytest.approx(1.0)
    assert run.alpha.sum() == pytest.approx(1.0)


def test_ewf_identity_stops_at_half():
    run = run_eager_waterfilling(single_edge(), IDENTITY)
    eager = [s for s in run.trace if s.eager]
    assert len(eager) == 1 and eager[0].active == 1
    assert eager[0].level_end == pytest.approx(0.5)


def test_ewf_no_arrived_neighbours():
    run = run_eager_waterfilling(from_edges(2, [(0, 1)], [(A, 1), (A, 0), (D, 0), (D, 1)]), IDENTITY)
    # vertex 1 arrives with nothing to pour into; vertex 0 pours on arrival
    assert [s.active for s in run.trace if s.eager] == [0]


def test_ewf_rejects_bad_f():
    with pytest.raises(ValueError):
        run_eager_waterfilling(single_edge(), LinearSpline([0.0, 1.0], [0.0, 0.9]))
    with pytest.raises(TypeError):
        run_eager_waterfilling(single_edge(), lambda x: x)


def test_ewf_eager_postcondition(small_ewf):
    f = small_ewf.f
    for seed in range(60):
        inst = generate_random(10, 0.4, seed=seed)
        done = set()
        for cut, (kind, u) in enumerate(inst.timeline):
            if kind == DEADLINE:
                done.add(u)
                continue
            run = run_eager_waterfilling(Instance(inst.n, inst.edges, inst.timeline[:cut + 1]), f)
            arrived = {w for k, w in inst.timeline[:cut + 1] if k == ARRIVAL}
            xu = run.water[u]
            for v in inst.neighbors(u):
                if v in arrived and v not in done:
                    xv = run.water[v]
                    assert f(xu) + f(xv) >= 1 - 1e-9 or xv >= 1 - 1e-12 or xu >= 1 - 1e-12


def test_ewf_invariants_and_ledger(small_ewf):
    f = small_ewf.f
    for seed in range(80):
        inst = generate_random(int(np.random.default_rng(seed).integers(2, 16)), 0.35, seed=seed)
        run = run_eager_waterfilling(inst, f)
        _check_fractional(inst, run)
        for (u, v), (au, av, pv) in run.after_deadline.items():
            bound = ledger_bound(f, run.level_after_arrival[u], run.level_after_arrival[v],
                                 run.level_before_deadline[u], pv)
            assert au + av >= bound - 1e-6
        for u, v in inst.edges:
            assert run.alpha[u] + run.alpha[v] >= small_ewf.gamma - 1e-6
