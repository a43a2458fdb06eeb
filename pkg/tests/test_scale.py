import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflim import drift_models as dm
from difflim.quadrature import cumulative, integrate_intervals
from difflim.scale import (
    ClassK1Error,
    DomainTooWideError,
    OutOfTableError,
    build_scale,
    check_A1,
    check_A2,
    check_A3,
    check_A4,
    check_growth,
    check_thm7,
    export_checks_csv,
    nested_integral,
    scale_inverse,
)


@pytest.fixture(scope="module")
def besq_100():
    return build_scale(dm.besq(c0=1.0).drift, 100.0, 5.0)


@pytest.fixture(scope="module")
def zero_tab():
    return build_scale(dm.zero_drift().drift, 400.0, 5.0)


# ---------------------------------------------------------------- quadrature


def test_simpson_is_exact_on_cubics():
    lo = np.array([-1.0, 0.0, 2.0])
    hi = np.array([1.0, 3.0, 2.5])
    got = integrate_intervals(lambda v: 4 * v**3 - 3 * v**2 + 1, lo, hi, 1e-12)
    exact = (hi**4 - hi**3 + hi) - (lo**4 - lo**3 + lo)
    np.testing.assert_allclose(got, exact, rtol=1e-14)


def test_reversed_interval_changes_sign():
    a = integrate_intervals(np.exp, np.array([0.0]), np.array([1.0]), 1e-12)
    b = integrate_intervals(np.exp, np.array([1.0]), np.array([0.0]), 1e-12)
    assert a[0] == pytest.approx(math.e - 1, abs=1e-11)
    assert b[0] == pytest.approx(-a[0], abs=1e-15)


def test_cumulative_is_zero_at_anchor():
    nodes = np.linspace(-2, 2, 41)
    acc = cumulative(np.cos, nodes, 1e-12, anchor=20)
    assert acc[20] == 0.0
    np.testing.assert_allclose(acc, np.sin(nodes), atol=1e-10)


# ---------------------------------------------------------------- build_scale


def test_zero_drift_scale_is_identity(zero_tab):
    np.testing.assert_array_equal(zero_tab.fprime, 1.0)
    np.testing.assert_allclose(zero_tab.f, zero_tab.grid, atol=1e-12)


def test_besq_fprime_value(besq_100):
    assert besq_100.fprime_at(1.0) == pytest.approx(1.0 / 101.0, rel=1e-9)
    np.testing.assert_allclose(besq_100.fprime, (1 + besq_100.grid**2 * 100.0) ** -1.0, rtol=1e-8)


def test_constant_drift_closed_form():
    s = dm.constant_drift(a=1.0)
    tab = build_scale(s.drift, 1.0, 2.0)
    np.testing.assert_allclose(tab.fprime, np.exp(-2 * tab.grid), rtol=1e-12)
    np.testing.assert_allclose(tab.f, (1 - np.exp(-2 * tab.grid)) / 2, rtol=1e-10, atol=1e-12)
    assert tab.f[tab.zero_index] == 0.0


def test_quad_tol_is_honoured_for_besq():
    T = 1e3
    tab = build_scale(dm.besq(c0=1.0).drift, T, 3.0, quad_tol=1e-10)
    exact = np.arctan(tab.grid * math.sqrt(T)) / math.sqrt(T)
    assert np.max(np.abs(tab.f - exact)) <= 1e-10


def test_refinement_agrees_with_coarse_table():
    drift = dm.periodic_k1(alpha=0.5).drift
    coarse = build_scale(drift, 400.0, 2.0, quad_tol=1e-8)
    fine = build_scale(drift, 400.0, 2.0, quad_tol=1e-12, user_step=0.001)
    # coarse nodes are a subset of the fine nodes
    shared = np.isin(fine.grid, coarse.grid)
    assert shared.sum() == coarse.grid.size
    np.testing.assert_allclose(coarse.f, fine.f[shared], atol=1e-8)
    np.testing.assert_allclose(coarse.fprime, fine.fprime[shared], rtol=1e-8)


@pytest.mark.parametrize("name", ["besq", "periodic_k1", "delta_drift"])
def test_halving_the_step_moves_f_by_less_than_quad_tol(name):
    drift = dm.registry_get(name).drift
    T, tol = 400.0, 1e-9
    base = build_scale(drift, T, 3.0, quad_tol=tol)
    step = min(0.01, drift.feature_scale(T) / 10)
    half = build_scale(drift, T, 3.0, quad_tol=tol, user_step=step / 2)
    shared = np.isin(half.grid, base.grid)
    assert np.max(np.abs(half.f[shared] - base.f[np.isin(base.grid, half.grid)])) < tol


def test_domain_too_wide_names_x():
    with pytest.raises(DomainTooWideError, match="x="):
        build_scale(dm.constant_drift(a=100.0).drift, 1.0, 5.0)


def test_invalid_build_arguments():
    with pytest.raises(ValueError):
        build_scale(dm.zero_drift().drift, 1.0, 0.0)
    with pytest.raises(ValueError):
        build_scale(dm.zero_drift().drift, 1.0, 1.0, quad_tol=0.0)


def test_out_of_table(besq_100):
    with pytest.raises(OutOfTableError):
        besq_100.f_at(6.0)
    with pytest.raises(OutOfTableError):
        scale_inverse(besq_100, 10.0)


def test_table_csv(tmp_path, besq_100):
    p = tmp_path / "tab.csv"
    besq_100.to_csv(p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "f", "fprime"]
    assert len(rows) == besq_100.grid.size + 1
    assert float(rows[1][0]) == -5.0


# ---------------------------------------------------------------- inverse


def test_inverse_of_constant_drift():
    tab = build_scale(dm.constant_drift(a=1.0).drift, 1.0, 2.0)
    y = np.linspace(-10.0, 0.49, 23)
    y = y[(y > tab.f[0]) & (y < tab.f[-1])]
    np.testing.assert_allclose(scale_inverse(tab, y), -np.log(1 - 2 * y) / 2, atol=1e-9)


def test_inverse_of_zero_drift(zero_tab):
    y = np.linspace(-4.9, 4.9, 99)
    np.testing.assert_allclose(scale_inverse(zero_tab, y), y, atol=1e-12)


def test_besq_round_trip(besq_100):
    rng = np.random.default_rng(7)
    x = rng.uniform(-5, 5, 1000)
    x = np.append(x, 0.5)
    back = scale_inverse(besq_100, besq_100.f_at(x))
    np.testing.assert_allclose(back, x, atol=1e-7)
    assert abs(besq_100.f_at(scale_inverse(besq_100, besq_100.f_at(0.5))) - besq_100.f_at(0.5)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.99, 0.99))
def test_inverse_is_monotone_and_consistent(u):
    tab = build_scale(dm.periodic_k1(alpha=0.5).drift, 100.0, 3.0)
    y = u * tab.f[-1] if u >= 0 else -u * tab.f[0]
    x = scale_inverse(tab, y)
    assert abs(float(tab.f_at(x)) - y) <= 1e-9
    assert float(scale_inverse(tab, y + 1e-3)) > x


# ---------------------------------------------------------------- nested and A3


def test_nested_integral_examples(zero_tab):
    assert nested_integral(zero_tab, lambda v: np.zeros_like(v), 1.3).value == 0.0
    assert nested_integral(zero_tab, lambda v: np.ones_like(v), 1.0).value == pytest.approx(1.0, abs=1e-12)


def test_nested_integral_against_direct_double_quadrature(besq_100):
    from scipy.integrate import quad

    q = np.cos
    x = 0.8
    # independent oracle: outer quad over u of f'(u) * inner quad
    def outer(u):
        inner = quad(lambda v: math.cos(v) * (1 + 100 * v * v), 0, u, epsabs=1e-13)[0]
        return inner / (1 + 100 * u * u)

    expected = 2 * quad(outer, 0, x, epsabs=1e-12, limit=200)[0]
    # off-grid values of f and f' are cubic Hermite interpolants (relative error ~1e-7 here)
    assert nested_integral(besq_100, q, x).value == pytest.approx(expected, rel=1e-7)


def test_A3_zero(zero_tab):
    assert check_A3(zero_tab, lambda v: np.zeros_like(v), 1.0) == 0.0


def test_A3_sin_example(zero_tab):
    got = check_A3(zero_tab, lambda v: np.sin(v * 20.0), 1.0)
    assert got == pytest.approx(0.1, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5.0, 5.0).filter(lambda c: abs(c) > 1e-3))
def test_A3_is_absolutely_homogeneous(c):
    tab = build_scale(dm.besq(c0=1.0).drift, 10.0, 3.0)
    base = check_A3(tab, np.cos, 2.0)
    assert check_A3(tab, lambda v: c * np.cos(v), 2.0) == pytest.approx(abs(c) * base, rel=1e-9)


def test_A3_besq_residual_decreases():
    s = dm.besq(c0=1.0)
    vals = []
    for T in (1e2, 1e3, 1e4):
        tab = build_scale(s.drift, T, 5.0)
        vals.append(check_A3(tab, lambda v, T=T: dm.residual_q1(s, T, v), 5.0))
    assert vals[0] > vals[1] > vals[2]
    # direct oracle: f'(x) int_0^x -2/(1+v^2T) (1+v^2T) dv = -2x/(1+x^2T), max 1/sqrt(T)
    np.testing.assert_allclose(vals, [1 / math.sqrt(T) for T in (1e2, 1e3, 1e4)], rtol=1e-6)


@pytest.mark.parametrize("name", dm.known_ids())
def test_A3_residuals_shrink_along_ladder(name):
    s = dm.registry_get(name)
    N = 2.0
    for resid in (dm.residual_q1, dm.residual_q2):
        vals = []
        for T in (1e2, 1e4):
            tab = build_scale(s.drift, T, 3.0)
            vals.append(check_A3(tab, lambda v, T=T: resid(s, T, v), N))
        assert vals[1] <= vals[0] + 1e-9


# ---------------------------------------------------------------- A4


def test_A4_example_and_ladder():
    s = dm.oscillatory_beta1()
    assert check_A4(build_scale(s.drift, 400.0, 2.0), s, 1.0) == pytest.approx(0.1, abs=1e-9)
    for T in (1e2, 1e3, 1e4):
        assert check_A4(build_scale(s.drift, T, 5.0), s, 5.0) == pytest.approx(2 / math.sqrt(T), rel=1e-8)


def test_A4_requires_tag(zero_tab):
    with pytest.raises(ValueError):
        check_A4(zero_tab, dm.besq(), 1.0)


# ---------------------------------------------------------------- A2


def test_A2_empty_set(zero_tab):
    assert check_A2(zero_tab, dm.zero_drift().transform, [], 1.0) == 0.0


@pytest.mark.parametrize("eps,x", [(0.1, 1.0), (0.05, 0.3), (0.2, 2.5)])
def test_A2_zero_drift_piecewise(zero_tab, eps, x):
    got = check_A2(zero_tab, dm.zero_drift().transform, [(-eps, eps)], x)
    # brute-force midpoint sum of min(u, eps) on [0, x]
    n = 200_000
    u = (np.arange(n) + 0.5) * x / n
    riemann = float(np.sum(np.minimum(u, eps)) * x / n)
    assert got == pytest.approx(riemann, abs=1e-8)
    assert 2 * got == pytest.approx(2 * eps * x - eps**2, abs=1e-10)


def test_A2_shrinks_with_measure_of_B(besq_100):
    tr = dm.besq().transform
    vals = [check_A2(besq_100, tr, [(-e, e)], 1.0) for e in (0.4, 0.2, 0.1, 0.05, 0.01)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- A1, growth


def test_A1_and_growth_for_besq():
    s = dm.besq(c0=1.0)
    ratios = []
    for T in (1e2, 1e4):
        tab = build_scale(s.drift, T, 5.0)
        ratios.append(check_A1(tab, s.transform, 5.0))
        assert check_growth(s.transform, T, 5.0) >= 1.0
    # (2c0 T x^2/(1+x^2T) + 1)^2 + 4x^2 over 1 + x^4 stays bounded in T
    assert max(ratios) < 12.0


# ---------------------------------------------------------------- K1 conditions


def test_thm7_zero_drift_is_exact(zero_tab):
    c = check_thm7(zero_tab, dm.zero_drift(), 3.0)
    assert c.cond1_sup == 0.0 and c.cond2_sup == 0.0 and c.cond2_l2 == 0.0
    assert c.cond1(np.array([0.7]))[0] == 0.0


def test_thm7_periodic_fprime_range():
    alpha = 0.5
    tab = build_scale(dm.periodic_k1(alpha).drift, 400.0, 3.0)
    c = check_thm7(tab, dm.periodic_k1(alpha), 2.0)
    lo, hi = c.fprime_range
    assert math.exp(-2 * alpha) * (1 - 1e-9) <= lo and hi <= math.exp(2 * alpha) * (1 + 1e-9)
    assert lo == pytest.approx(math.exp(-2 * alpha), rel=1e-4)


def test_thm7_cond1_vanishes_pointwise():
    s = dm.periodic_k1(alpha=0.5)
    y = np.array([-1.0, 0.5, 1.5])
    ladder = (1e2, 1e4, 1e6)
    vals = [np.abs(check_thm7(build_scale(s.drift, T, 3.0), s, 2.0).cond1(y)) for T in ladder]
    # cond1 = -2 int_0^x sinh(sin(u sqrt T)) du has zero period mean, so it stays below
    # the integral over one positive half-period
    from scipy.integrate import quad

    half_period = 2 * quad(lambda v: math.sinh(math.sin(v)), 0, math.pi)[0]
    for T, v in zip(ladder, vals):
        assert np.all(v <= half_period / math.sqrt(T) * (1 + 1e-6))
    assert np.all(vals[-1] < 1e-2)


def test_thm7_class_error():
    s = dm.periodic_k1(alpha=0.5)
    tab = build_scale(s.drift, 100.0, 3.0)
    with pytest.raises(ClassK1Error):
        check_thm7(tab, s, 2.0, delta=0.9, C=1.1)
    with pytest.raises(ClassK1Error):
        check_thm7(build_scale(dm.besq().drift, 100.0, 3.0), dm.besq(), 2.0)


def test_export_checks_csv(tmp_path):
    p = tmp_path / "checks.csv"
    export_checks_csv([(1e3, "A3", 5.0, 0.1), (100.0, "A4", 5.0, 0.2), (100.0, "A3", 5.0, 0.3)], p)
    with open(p) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["T", "checker", "N", "value"]
    assert [r[:2] for r in rows[1:]] == [["100.0", "A3"], ["100.0", "A4"], ["1000.0", "A3"]]
