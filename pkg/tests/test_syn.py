import math
from types import SimpleNamespace

import numpy as np
import pytest

from dynap2p.analysis import contraction_check, rate_fit
from dynap2p.asyn import reference_tick
from dynap2p.instances import single_edge
from dynap2p.operators import project_all
from dynap2p.oracle import solve_reference
from dynap2p.problem import (ConstraintProfile, CostProfile, RoleSchedule, TradingNetwork,
                             build_instance)
from dynap2p.syn import (DivergenceError, SolverState, StepConfig, async_alpha_bound,
                         default_steps, initial_state, run_syn, sync_alpha_bound, syn_step)


def _mixed_a():
    net = TradingNetwork(2, ((0, 1),))
    roles = RoleSchedule(2, (frozenset({0}),))
    costs = CostProfile(a={(0, 1): [0.5], (1, 0): [2.0]}, b_trade={(0, 1): [-1.0], (1, 0): [1.0]})
    cons = ConstraintProfile(np.array([[0.0], [-5.0]]), np.array([[5.0], [0.0]]),
                             {(0, 1): [0.0]})
    return build_instance(net, 1, roles, costs, cons)


def test_default_steps_examples():
    st = default_steps(single_edge(a=1.0), sigma=0.99)
    assert np.allclose(st.alpha, 0.495) and np.allclose(st.beta, 1.0)
    inst = single_edge(a=1.0)
    assert np.allclose(sync_alpha_bound(inst, [1.0]), async_alpha_bound(inst, [1.0]))
    mixed = _mixed_a()
    assert np.allclose(default_steps(mixed, sigma=1.0).alpha, 1 / 3)
    assert np.allclose(default_steps(mixed, sigma=1.0, mode="async").alpha, 1 / 9)


@pytest.mark.parametrize("sigma", [0.0, -0.5, 1.5])
def test_default_steps_rejects_sigma(sigma):
    with pytest.raises(ValueError):
        default_steps(single_edge(), sigma=sigma)


def test_step_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        StepConfig(alpha=[0.0, 1.0], beta=[1.0])
    with pytest.raises(ValueError):
        StepConfig(alpha=[1.0, 1.0], beta=[-1.0])


def test_fixed_point(six, six_oracle):
    st = default_steps(six)
    state = SolverState(0, six_oracle.p.copy(), six_oracle.w.copy())
    nxt = syn_step(six, st, state)
    assert np.abs(nxt.p - state.p).max() <= 1e-10
    assert np.abs(nxt.w - state.w).max() <= 1e-10
    assert nxt.k == 1


def test_two_prosumer_converges(two):
    state, report = run_syn(two, default_steps(two), tol=1e-8)
    assert np.abs(state.p - [1.0, -1.0]).max() <= 1e-8
    assert report.meta["converged"]
    assert len(report) == state.k + 1


def test_infinite_tol_returns_snapshot(two):
    state, report = run_syn(two, default_steps(two), tol=math.inf)
    assert state.k == 0 and len(report) == 1


def test_run_syn_argument_errors(two):
    with pytest.raises(ValueError):
        run_syn(two, default_steps(two), tol=0.0)
    with pytest.raises(ValueError):
        run_syn(two, default_steps(two), max_iter=0)


def test_six_prosumer_reaches_equilibrium(six, six_oracle):
    state, report = run_syn(six, default_steps(six), tol=1e-8, oracle=six_oracle)
    assert report.meta["converged"]
    assert max(report["coupling"][-1], report["stationarity"][-1]) <= 1e-6
    # reciprocity per edge and period
    r = np.abs(state.p + state.p[six.mate] - six.loss)
    assert r.max() <= 10 * 1e-8


def test_zero_primal_step_is_projection(six):
    rng = np.random.default_rng(0)
    p = rng.normal(scale=5, size=six.n)
    steps = SimpleNamespace(per_coord=lambda inst: (np.zeros(inst.n),
                                                    np.ones(inst.n)))
    nxt = syn_step(six, steps, SolverState(0, p, rng.normal(size=six.n)))
    assert np.array_equal(nxt.p, project_all(six, p))


def test_fejer_on_two_prosumer(two):
    sol = solve_reference(two)
    _, report = run_syn(two, default_steps(two), tol=1e-12, oracle=sol)
    slack = report["fejer_slack"][1:]
    assert np.all(slack <= 1e-12)


def test_bound_violation_fails_to_contract(two):
    st = default_steps(two, sigma=1.0)
    bad = StepConfig(alpha=4 * st.alpha, beta=st.beta)
    _, report = run_syn(two, bad, tol=1e-8, max_iter=2000, oracle=solve_reference(two))
    check = contraction_check(report)
    assert not check["converged"]
    assert check["fejer_violations"] > 0 and not check["contracts"]


def test_good_steps_contract(two):
    _, report = run_syn(two, default_steps(two), tol=1e-8, oracle=solve_reference(two))
    assert contraction_check(report)["contracts"]


def test_nonfinite_initial_state_rejected(two):
    with pytest.raises(ValueError):
        initial_state(two, p0=[np.nan, 0.0])


def test_overflow_raises_divergence(two):
    init = initial_state(two, p0=[1e308, -1e308], w0=[1e308, 1e308])
    with pytest.raises(DivergenceError):
        run_syn(two, default_steps(two), init=init, max_iter=5)


def test_jacobi_order_independence(six):
    rng = np.random.default_rng(1)
    st = default_steps(six)
    state = SolverState(0, rng.normal(size=six.n), rng.normal(size=six.n))
    ref = syn_step(six, st, state)
    for _ in range(5):
        p_new, w_new = state.p.copy(), state.w.copy()
        for i in rng.permutation(six.m):
            # every prosumer reads the k-snapshot only
            pi, wi = reference_tick(six, st, 1.0, int(i), state.p, state.w,
                                    state.p[six.mate], state.w[six.mate])
            blk = six.block(int(i))
            p_new[blk], w_new[blk] = pi[blk], wi[blk]
        assert np.allclose(p_new, ref.p, rtol=0, atol=1e-15)
        assert np.allclose(w_new, ref.w, rtol=0, atol=1e-15)


def test_linear_rate_on_six(six, six_oracle):
    _, report = run_syn(six, default_steps(six), tol=1e-13, max_iter=10_000, oracle=six_oracle)
    rate, r2 = rate_fit(report)
    assert 0 < rate < 1 and r2 >= 0.95


def test_sim_time_and_messages(two):
    _, report = run_syn(two, default_steps(two), tol=1e-8, compute_ms=2.0, latency_ms=0.5)
    k = report["k"]
    assert np.allclose(report["sim_time_ms"], 2.5 * k)
    assert np.array_equal(report["messages"], 2 * k)
