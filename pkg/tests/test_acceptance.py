"""Acceptance criteria 1-10 at full size.

Each test prints one ``ACCEPTANCE <k> PASS|FAIL`` line to the terminal
(visible even under output capture) before asserting.
"""

import math
import time

import pytest

from fomatch import suites
from fomatch.dualfuncs import BALANCED_GAMMA, EWF_GAMMA, synthesize_balanced, synthesize_ewf

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def test_01_balanced_lp(report):
    t0 = time.perf_counter()
    _, sol = synthesize_balanced(100)
    secs = time.perf_counter() - t0
    ok = sol.objective_value >= 0.569 and sol.max_violation <= 1e-6 and secs <= 1800
    assert report(1, ok, f"balanced n=100 objective={sol.objective_value:.10f} "
                         f"violation={sol.max_violation:.3g} seconds={secs:.1f}")


def test_02_ewf_lp(report):
    t0 = time.perf_counter()
    _, sol = synthesize_ewf(1000)
    secs = time.perf_counter() - t0
    ok = sol.objective_value >= 0.592 and sol.max_violation <= 1e-6 and secs <= 1800
    assert report(2, ok, f"ewf n=1000 objective={sol.objective_value:.10f} "
                         f"violation={sol.max_violation:.3g} seconds={secs:.1f}")


def test_03_continuous_sampling(report, balanced, ewf):
    res = suites.continuous(balanced, ewf, samples=100_000, seed=0, floor=-1e-9)
    worst = min(v for k, v in res.details.items() if k != "samples")
    assert report(3, res.passed, f"min margin {worst:.3g} over 100000 samples per family; {res.details}")


def test_04_ewf_dual_feasibility(report, ewf):
    res = suites.ewf_feasibility(ewf, count=1000, max_n=50, tri_max=40, seed=0, gamma=EWF_GAMMA)
    ok = res.passed and res.seconds <= 300
    assert report(4, ok, f"{res.details['instances']} instances, min alpha_u+alpha_v-0.592="
                         f"{res.details['min_margin']:.3g}, dual gap {res.details['max_dual_gap']:.3g}, "
                         f"seconds={res.seconds:.1f}")


def test_05_balanced_dual_feasibility(report, balanced):
    res = suites.balanced_feasibility(balanced, count=50, max_n=10, epsilon=0.03, samples=20_000,
                                      trials=100_000, seed=0, gamma=BALANCED_GAMMA, tolerance=0.01)
    ok = res.passed and res.seconds <= 1800
    assert report(5, ok, f"50 instances, min mean margin {res.details['min_mean_margin']:.4f} "
                         f"(bar -0.01), max stderr {res.details['max_stderr']:.2g}, seconds={res.seconds:.1f}")


def test_06_degeneration(report, balanced):
    res = suites.degeneration(10_000, seed=0, funcs=balanced)
    ok = res.passed and res.details["pairs"] == 10_000
    assert report(6, ok, f"{res.details['pairs']} pairs, {res.details['mismatches']} mismatches")


def test_07_structural_suite(report, balanced):
    alt = suites.alternating_path(balanced, trials=1000, seed=0)
    st = suites.structure(balanced, instances=500, n=6, resolution=64, seed=0)
    bd = suites.binding(balanced, edges=100, n=6, trials=2000, seed=0)
    secs = alt.seconds + st.seconds + bd.seconds
    ok = alt.passed and st.passed and bd.passed and secs <= 900
    assert report(7, ok, f"alternating-path {alt.details}; structure {st.details}; binding {bd.details}; "
                         f"seconds={secs:.1f}")


def test_08_oracle(report):
    res = suites.oracle(500, seed=0)
    assert report(8, res.passed, f"max |fractional - integral| {res.details['max_gap']:.3g} on 500 instances, "
                                 f"K3 {res.details['triangle']}")


def test_09_interpolation(report, balanced, ewf):
    res = suites.interpolation(balanced, ewf, points=1000, seed=0)
    assert report(9, res.passed, str(res.details))


def test_10_constants(report):
    res = suites.constants()
    w = res.details["omega"]
    ok = res.passed and abs(w * math.exp(w) - 1) <= 1e-12
    assert report(10, ok, f"omega={w:.12f} waterfilling={res.details['waterfilling']:.10f}")
