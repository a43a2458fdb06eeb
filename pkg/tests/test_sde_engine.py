import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflim import drift_models as dm
from difflim.scale import build_scale
from difflim.sde_engine import (
    EnsembleError,
    ExcursionError,
    StepPolicy,
    coupled_policy,
    decomposition_defect,
    euler_residual,
    ito_residual,
    mix64,
    run_ensemble,
    simulate_path_em,
    simulate_path_transformed,
)
from difflim.stats import ks_two_sample, stderr


def test_mix64_matches_reference_splitmix64():
    # published SplitMix64 outputs for state 0 and state 1234567
    assert mix64(0, 0) == 0xE220A8397B1DCDAF
    assert mix64(0, 1) == 0x6E789E6AA1B965F4
    assert [mix64(1234567, i) for i in range(3)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
    ]


def test_zero_drift_path_is_brownian_sum():
    s = dm.zero_drift(x0=0.3)
    p = simulate_path_em(s, 50.0, 1.0, seed=4)
    assert p.xi[0] == 0.3
    np.testing.assert_allclose(p.xi, 0.3 + np.concatenate([[0.0], np.cumsum(p.dW)]), rtol=0, atol=1e-13)
    np.testing.assert_array_equal(p.zeta, p.xi)


def test_constant_drift_mean():
    ens = run_ensemble(dm.constant_drift(a=0.7, x0=0.2), 1.0, 1.0, 10_000, seed=21)
    x = ens.at("xi", 1.0)
    assert abs(float(np.mean(x)) - 0.9) <= 3 * stderr(x)


def test_zero_drift_ensemble_moments():
    ens = run_ensemble(dm.zero_drift(x0=-0.5), 10.0, 1.0, 10_000, seed=22)
    x = ens.at("xi", 1.0)
    assert abs(float(np.mean(x)) + 0.5) <= 3 * stderr(x)
    assert 0.95 <= float(np.var(x, ddof=1)) <= 1.05


def test_besq_mean_at_large_T():
    s = dm.besq(c0=1.0, x0=1.0)
    ens = run_ensemble(s, 1e4, 1.0, 10_000, seed=23, statistics=("zeta",))
    z = ens.at("zeta", 1.0)
    assert abs(float(np.mean(z)) - 4.0) <= 3 * stderr(z) + 0.05


def test_seed_reproducibility_bit_identical():
    s = dm.oscillatory_beta1()
    a = simulate_path_em(s, 400.0, 0.5, seed=99)
    b = simulate_path_em(s, 400.0, 0.5, seed=99)
    for name in ("xi", "dW", "beta1", "beta2", "beta_xi", "i_t", "zeta", "eta"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = simulate_path_em(s, 400.0, 0.5, seed=100)
    assert not np.array_equal(a.dW, c.dW)


def test_ensemble_independent_of_thread_count():
    s = dm.besq()
    kw = dict(statistics=("zeta", "beta2"), probes=(0.5, 1.0), sup_abs=("zeta",), occupation=[(-0.1, 0.1)])
    one = run_ensemble(s, 100.0, 1.0, 3000, seed=5, threads=1, **kw)
    four = run_ensemble(s, 100.0, 1.0, 3000, seed=5, threads=4, **kw)
    for name in ("zeta", "beta2"):
        np.testing.assert_array_equal(one.values[name], four.values[name])
    np.testing.assert_array_equal(one.sup_abs["zeta"], four.sup_abs["zeta"])
    np.testing.assert_array_equal(one.occupation, four.occupation)


def test_ensemble_path_matches_single_path():
    s = dm.periodic_k1()
    ens = run_ensemble(s, 100.0, 1.0, 20, seed=8, statistics=("xi", "i_t"))
    p = simulate_path_em(s, 100.0, 1.0, seed=mix64(8, 13))
    assert ens.at("xi", 1.0)[13] == p.xi[-1]
    assert ens.at("i_t", 1.0)[13] == p.i_t[-1]


def test_single_path_is_wrapped():
    ens = run_ensemble(dm.zero_drift(), 1.0, 1.0, 1, seed=3)
    assert ens.single is not None
    assert ens.single.xi[-1] == ens.at("xi", 1.0)[0]


def test_transformed_integrator_agrees_with_direct():
    s = dm.besq(c0=1.0, x0=1.0)
    T = 1e3
    tab = build_scale(s.drift, T, 5.0)
    em = run_ensemble(s, T, 1.0, 10_000, seed=31)
    tr = run_ensemble(s, T, 1.0, 10_000, seed=32, method="transformed", table=tab)
    assert ks_two_sample(em.at("xi", 1.0), tr.at("xi", 1.0)) < 0.03


def test_transformed_zero_drift_is_identical_scheme():
    s = dm.zero_drift(x0=0.4)
    tab = build_scale(s.drift, 10.0, 5.0)
    a = simulate_path_em(s, 10.0, 1.0, seed=6)
    b = simulate_path_transformed(s, tab, 10.0, 1.0, seed=6)
    np.testing.assert_allclose(a.xi, b.xi, atol=1e-12)


def test_constant_drift_transformed_diffusion_is_linear():
    tab = build_scale(dm.constant_drift(a=1.0).drift, 1.0, 2.0)
    y = np.linspace(-5.0, 0.45, 30)
    np.testing.assert_allclose(tab.sigma_hat(y), 1 - 2 * y, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(dm.known_ids()),
    st.sampled_from([1.0, 1e2, 1e4, 1e6]),
    st.floats(1e-4, 1e-2),
    st.floats(0.01, 1.0),
    st.floats(0.1, 2.0),
)
def test_step_policy_bounds(name, T, h_max, stability, horizon):
    s = dm.registry_get(name)
    h, n = StepPolicy(h_max=h_max, stability=stability).step(s, T, horizon)
    L = s.drift.drift_bound(T)
    assert h <= min(h_max, stability / (1 + L * L)) * (1 + 1e-9)
    assert n * h == pytest.approx(horizon, rel=1e-12)


def test_fine_level_rounds_to_powers_of_two():
    s = dm.besq()
    pol = coupled_policy(StepPolicy(), s, (1e2, 1e4), 1.0)
    for T in (1e2, 1e4):
        h, n = pol.step(s, T, 1.0)
        assert n & (n - 1) == 0
        assert pol.substeps(n) * n == 1 << pol.fine_level
    with pytest.raises(ValueError):
        coupled_policy(StepPolicy(), s, (1e2,), 1.0).step(s, 1e4, 1.0)


def test_coupled_ladder_shares_brownian_paths():
    s = dm.oscillatory_beta1()
    pol = coupled_policy(StepPolicy(), s, (1e2, 1e3, 1e4), 1.0)
    W = [run_ensemble(s, T, 1.0, 200, step_policy=pol, seed=12, statistics=("W",)).at("W", 1.0)
         for T in (1e2, 1e3, 1e4)]
    np.testing.assert_allclose(W[0], W[1], atol=1e-12)
    np.testing.assert_allclose(W[0], W[2], atol=1e-12)


def test_step_halving_for_smooth_scenario():
    s = dm.besq(c0=1.0, x0=1.0)
    T = 100.0
    coarse = StepPolicy(h_max=1e-3, fine_level=11)
    fine = StepPolicy(h_max=5e-4, fine_level=11)
    assert coarse.step(s, T, 1.0)[1] * 2 == fine.step(s, T, 1.0)[1]
    a = run_ensemble(s, T, 1.0, 10_000, step_policy=coarse, seed=41, statistics=("zeta", "beta2"))
    b = run_ensemble(s, T, 1.0, 10_000, step_policy=fine, seed=41, statistics=("zeta", "beta2"))
    for name in ("zeta", "beta2"):
        x, y = a.at(name, 1.0), b.at(name, 1.0)
        assert abs(float(np.mean(x) - np.mean(y))) < stderr(y)


def test_tightness_of_sup_zeta():
    s = dm.besq(c0=1.0, x0=1.0)
    m = []
    for T in (1e2, 1e4):
        ens = run_ensemble(s, T, 1.0, 4000, seed=51, sup_abs=("zeta",))
        m.append(float(np.mean(ens.sup_abs["zeta"] ** 2)))
    assert m[1] <= 2 * m[0]


def test_oscillatory_beta1_variance_shrinks():
    s = dm.oscillatory_beta1()
    var = [float(np.var(run_ensemble(s, T, 1.0, 4000, seed=61, statistics=("beta1",)).at("beta1", 1.0)))
           for T in (1e2, 1e4)]
    assert var[1] < var[0]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(dm.known_ids()), st.sampled_from([10.0, 1e3, 1e5]), st.integers(0, 2**63))
def test_pathwise_identities(name, T, seed):
    s = dm.registry_get(name)
    p = simulate_path_em(s, T, 0.2, seed=seed)
    assert p.xi[0] == s.x0
    assert euler_residual(s, p) <= 1e-12
    assert ito_residual(p) <= 1e-12


def test_ito_decomposition_defect_shrinks_with_step():
    s = dm.besq(c0=1.0, x0=1.0)
    sup = []
    for level in (8, 12):
        pol = StepPolicy(h_max=2.0**-level, fine_level=12)
        sup.append(float(np.max(np.abs(decomposition_defect(s, simulate_path_em(s, 10.0, 1.0, pol, seed=3))))))
    assert sup[1] < sup[0]


def test_excursion_errors():
    s = dm.zero_drift()
    with pytest.raises(ExcursionError):
        simulate_path_em(s, 1.0, 5.0, seed=1, domain=0.05)
    with pytest.raises(EnsembleError):
        run_ensemble(s, 1.0, 1.0, 200, seed=1, domain=0.05)


def test_probe_outside_horizon_and_bad_statistic():
    s = dm.zero_drift()
    with pytest.raises(ValueError):
        run_ensemble(s, 1.0, 1.0, 10, probes=(2.0,))
    with pytest.raises(ValueError):
        run_ensemble(s, 1.0, 1.0, 10, statistics=("nope",))
    with pytest.raises(ValueError):
        run_ensemble(s, 1.0, 1.0, 10, statistics=("q_int",))


def test_trace_csv():
    p = simulate_path_em(dm.besq(), 10.0, 0.01, seed=2)
    buf = io.StringIO()
    p.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,xi,zeta,eta,beta1,beta2,beta_xi,i_t"
    assert len(lines) == p.times.size + 1
    first = [float(v) for v in lines[1].split(",")]
    assert first[:3] == [0.0, p.xi[0], p.zeta[0]]
    assert math.isclose(float(lines[-1].split(",")[0]), 0.01, rel_tol=1e-12)
