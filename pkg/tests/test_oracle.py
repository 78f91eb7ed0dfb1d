import numpy as np
import pytest

from dynap2p.instances import random_instance, single_edge, two_prosumer
from dynap2p.oracle import (InfeasibleInstance, OracleSolution, _dykstra, grid_reference,
                            recover_dual, solve_reference)
from dynap2p.problem import (ConstraintProfile, CostProfile, RoleSchedule, TradingNetwork,
                             build_instance)
from dynap2p.qp import QPInfeasible, solve_qp
from dynap2p.scenario import scenario_path


def objective(inst, p):
    return float(np.dot(inst.a * p, p) + np.dot(inst.b, p))


def test_two_prosumer_analytic():
    inst = two_prosumer()
    sol = solve_reference(inst)
    assert np.allclose(sol.p, [1.0, -1.0], atol=1e-12)
    assert np.allclose(sol.w, [2.0, 2.0], atol=1e-10)
    assert objective(inst, sol.p) == pytest.approx(-3.0)
    assert np.allclose(grid_reference(inst), [1.0, -1.0], atol=2e-3)


def test_zero_loss_zero_b():
    inst = single_edge(T=2, a=1.0, b=0.0, loss=0.0)
    sol = solve_reference(inst)
    assert np.allclose(sol.p, 0.0, atol=1e-12)
    assert np.allclose(sol.w, 0.0, atol=1e-12)


def test_six_prosumer_kkt(six, six_oracle):
    assert six_oracle.stationarity <= 1e-8
    assert six_oracle.coupling <= 1e-8


def test_cached_oracle_matches(six, six_oracle):
    cached = OracleSolution.from_json(scenario_path("six_prosumer.oracle"))
    assert np.allclose(cached.p, six_oracle.p, atol=1e-10)
    assert np.allclose(cached.w, six_oracle.w, atol=1e-10)


def test_pg_dykstra_route_agrees(six, six_oracle):
    alt = solve_reference(six, method="pg-dykstra", tol=1e-11)
    assert np.abs(alt.p - six_oracle.p).max() <= 1e-6
    assert np.abs(alt.w - six_oracle.w).max() <= 1e-5


def test_unknown_method():
    with pytest.raises(ValueError):
        solve_reference(two_prosumer(), method="simplex")


def test_objective_beats_random_feasible_points(six, six_oracle):
    rng = np.random.default_rng(0)
    best = objective(six, six_oracle.p)
    for _ in range(100):
        x, gap = _dykstra(six, rng.normal(scale=8.0, size=six.n), 1e-12, 50_000)
        assert gap <= 1e-8
        assert objective(six, x) >= best - 1e-9


def test_grid_brute_force_small_instances():
    rng = np.random.default_rng(0)
    for k in range(20):
        m = 2 if k % 2 else 3
        T = int(rng.integers(1, 4)) if m == 2 else 1
        inst = random_instance(rng, m=m, T=T, extra_edges=int(rng.integers(0, 2)))
        assert inst.n <= 6
        sol = solve_reference(inst)
        assert np.abs(grid_reference(inst) - sol.p).max() <= 2e-3


def test_grid_rejects_large():
    with pytest.raises(ValueError):
        grid_reference(single_edge(T=4))


def test_random_instances_kkt(small_instances):
    for inst in small_instances[:20]:
        sol = solve_reference(inst)
        assert sol.stationarity <= 1e-8 and sol.coupling <= 1e-8


def test_dual_is_symmetric_per_edge(six, six_oracle):
    assert np.array_equal(six_oracle.w, six_oracle.w[six.mate])


def test_min_norm_dual_on_degenerate_instance():
    # same-role edge with zero loss pins both trades to zero: the price there is free
    rng = np.random.default_rng(3)
    inst = random_instance(rng, m=4, T=2, extra_edges=2)
    sol = solve_reference(inst)
    w = recover_dual(inst, sol.p)
    from dynap2p.operators import kkt_residual
    assert kkt_residual(inst, sol.p, w)[0] <= 1e-8


def _infeasible():
    net = TradingNetwork(2, ((0, 1),))
    roles = RoleSchedule(2, (frozenset({0}),))
    costs = CostProfile(a={(0, 1): [1.0], (1, 0): [1.0]}, b_trade={(0, 1): [0.0], (1, 0): [0.0]})
    cons = ConstraintProfile(np.array([[0.0], [-5.0]]), np.array([[1.0], [0.0]]),
                             {(0, 1): [2.0]})
    return build_instance(net, 1, roles, costs, cons)


def test_infeasible_detected():
    inst = _infeasible()
    with pytest.raises(InfeasibleInstance):
        solve_reference(inst)
    with pytest.raises(InfeasibleInstance):
        solve_reference(inst, method="pg-dykstra", max_iter=50, tol=1e-9)


def test_json_round_trip(tmp_path, six_oracle):
    path = tmp_path / "o.json"
    six_oracle.to_json(path)
    back = OracleSolution.from_json(path)
    assert np.array_equal(back.p, six_oracle.p) and np.array_equal(back.w, six_oracle.w)
    assert back.objective == six_oracle.objective


def test_qp_solver_kkt_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        M = rng.normal(size=(n, n))
        G = M @ M.T + n * np.eye(n)
        a = rng.normal(size=n)
        E = rng.normal(size=(1, n))
        x0 = rng.normal(size=n)
        e = E @ x0
        C = rng.normal(size=(4, n))
        c = C @ x0 - rng.uniform(0, 1, 4)
        res = solve_qp(G, a, E, e, C, c)
        x = res.x
        assert np.allclose(E @ x, e, atol=1e-9)
        assert np.all(C @ x - c >= -1e-9)
        assert np.all(res.ineq_mult >= 0)
        assert np.allclose(G @ x + a, E.T @ res.eq_mult + C.T @ res.ineq_mult, atol=1e-8)
        assert np.allclose(res.ineq_mult * (C @ x - c), 0.0, atol=1e-8)


def test_qp_infeasible():
    with pytest.raises(QPInfeasible):
        solve_qp(np.eye(1), np.zeros(1), C=np.array([[1.0], [-1.0]]), c=np.array([1.0, 0.0]))
