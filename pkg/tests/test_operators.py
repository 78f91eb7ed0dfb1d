import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynap2p import kernels
from dynap2p.instances import single_edge, two_prosumer
from dynap2p.operators import (EdgeCouplingSet, ProsumerFeasibleSet, edge_prox, kkt_residual,
                               project_all, project_feasible)
from dynap2p.oracle import grid_project, project_reference, solve_reference


def fset(seller, lo, hi):
    return ProsumerFeasibleSet(np.array([[seller]]), np.array([[lo]]), np.array([[hi]]))


def random_case(rng, dim=None):
    dim = int(rng.integers(1, 6)) if dim is None else dim
    seller = bool(rng.random() < 0.5)
    a, b = np.sort(rng.uniform(0, 8, 2))
    lo, hi = (a, b) if seller else (-b, -a)
    if rng.random() < 0.2:
        lo = -np.inf if seller else lo
        hi = np.inf if not seller else hi
    v = rng.normal(scale=4.0, size=dim)
    return seller, lo, hi, v


def feasible(seller, lo, hi, x, tol=1e-9):
    sign = 1.0 if seller else -1.0
    return np.all(sign * x >= -tol) and lo - tol <= x.sum() <= hi + tol


def test_spec_examples():
    assert np.array_equal(project_feasible(fset(True, 0, 5), 0, 0, [3.0, -1.0]), [3.0, 0.0])
    assert np.allclose(project_feasible(fset(True, 0, 2), 0, 0, [3.0, 1.0]), [2.0, 0.0],
                       atol=1e-12)
    assert np.allclose(project_feasible(fset(False, -4, -1), 0, 0, [0.5, -0.5]), [0.0, -1.0],
                       atol=1e-12)


def test_spec_examples_against_qp_oracle():
    for seller, lo, hi, v in [(True, 0, 2, [3.0, 1.0]), (False, -4, -1, [0.5, -0.5])]:
        ref = project_reference(seller, lo, hi, v)
        assert np.allclose(project_feasible(fset(seller, lo, hi), 0, 0, v), ref, atol=1e-10)


def test_feasible_point_is_fixed():
    rng = np.random.default_rng(0)
    for _ in range(200):
        seller, lo, hi, v = random_case(rng)
        x = project_feasible(fset(seller, lo, hi), 0, 0, v)
        assert np.array_equal(project_feasible(fset(seller, lo, hi), 0, 0, x), x) or \
            np.allclose(project_feasible(fset(seller, lo, hi), 0, 0, x), x, atol=1e-12)


def test_idempotence_1000():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        seller, lo, hi, v = random_case(rng)
        s = fset(seller, lo, hi)
        x = project_feasible(s, 0, 0, v)
        assert feasible(seller, lo, hi, x)
        assert np.allclose(project_feasible(s, 0, 0, x), x, atol=1e-11)


def test_nonexpansive_1000():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        seller, lo, hi, v = random_case(rng)
        u = v + rng.normal(scale=rng.uniform(0.01, 5), size=v.size)
        s = fset(seller, lo, hi)
        d = np.linalg.norm(project_feasible(s, 0, 0, v) - project_feasible(s, 0, 0, u))
        assert d <= np.linalg.norm(v - u) + 1e-11


def test_variational_inequality():
    rng = np.random.default_rng(3)
    for _ in range(100):
        seller, lo, hi, v = random_case(rng)
        s = fset(seller, lo, hi)
        x = project_feasible(s, 0, 0, v)
        for _ in range(100):
            y = project_feasible(s, 0, 0, rng.normal(scale=6, size=v.size))
            assert np.dot(v - x, y - x) <= 1e-10 * max(1.0, np.abs(v).max()) ** 2


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.booleans(),
       st.floats(0, 20), st.floats(0, 20))
def test_projection_matches_qp_property(v, seller, a, b):
    lo, hi = sorted((a, b))
    if not seller:
        lo, hi = -hi, -lo
    x = project_feasible(fset(seller, lo, hi), 0, 0, v)
    ref = project_reference(seller, lo, hi, v)
    assert feasible(seller, lo, hi, x)
    assert np.allclose(x, ref, atol=1e-8)


def test_qp_oracle_1000_cases():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        seller, lo, hi, v = random_case(rng)
        x = project_feasible(fset(seller, lo, hi), 0, 0, v)
        worst = max(worst, np.abs(x - project_reference(seller, lo, hi, v)).max())
    assert worst <= 1e-8


def test_grid_search_small_dimensions():
    rng = np.random.default_rng(5)
    for k in range(60):
        seller, lo, hi, v = random_case(rng, dim=1 + k % 3)
        lo, hi = (max(lo, -20.0), min(hi, 20.0))
        x = project_feasible(fset(seller, lo, hi), 0, 0, v)
        g = grid_project(seller, lo, hi, v)
        assert np.abs(x - g).max() <= 2e-3


def test_numpy_projection_path_matches_loop():
    rng = np.random.default_rng(6)
    inst = two_prosumer()
    from dynap2p.instances import random_instance
    for _ in range(30):
        inst = random_instance(rng, m=5, T=3, extra_edges=2)
        v = rng.normal(scale=5, size=inst.n)
        out_a = np.empty(inst.n)
        out_b = np.empty(inst.n)
        args = (inst.group_start, inst.group_stop, inst.group_sign, inst.group_lo,
                inst.group_hi)
        assert kernels.project_groups_loop(v, *args, out_a) == 0
        assert kernels.project_groups_numpy(v, *args, out_b) == 0
        assert np.allclose(out_a, out_b, atol=1e-10)


def test_empty_feasible_set_rejected():
    with pytest.raises(ValueError, match="empty"):
        fset(True, -3.0, -1.0)
    with pytest.raises(ValueError, match="empty"):
        fset(False, 1.0, 2.0)


def test_edge_prox_examples():
    z = np.zeros(1)
    assert np.array_equal(edge_prox(1.0, z, z, z, z, z), z)
    got = edge_prox(2.0, [1.0], [3.0], [2.0], [-1.5], [0.5])
    assert got == pytest.approx([2.0])
    args = dict(w_self=[1.0, -2.0], w_peer=[0.5, 4.0], q_self=[2.0, 1.0], q_peer=[-3.0, 0.2],
                loss=[0.1, 0.0])
    a = edge_prox(1.7, **args)
    b = edge_prox(1.7, args["w_peer"], args["w_self"], args["q_peer"], args["q_self"],
                  args["loss"])
    assert np.array_equal(a, b)


def test_edge_prox_errors():
    with pytest.raises(ValueError):
        edge_prox(0.0, [0.0], [0.0], [0.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        edge_prox(1.0, [0.0, 1.0], [0.0], [0.0], [0.0], [0.0])


@given(st.floats(0.1, 5), st.floats(0, 1),
       st.lists(st.floats(-10, 10), min_size=10, max_size=10))
def test_edge_prox_affine(beta, lam, vals):
    x = np.array(vals[:5])[:, None]
    y = np.array(vals[5:])[:, None]
    fx = edge_prox(beta, *x)
    fy = edge_prox(beta, *y)
    fz = edge_prox(beta, *(lam * x + (1 - lam) * y))
    assert np.allclose(fz, lam * fx + (1 - lam) * fy, rtol=1e-12, atol=1e-12)


def test_edge_prox_is_moreau_of_coupling_indicator():
    # prox of the conjugate of the coupling indicator, written through the projection
    rng = np.random.default_rng(7)
    cset = EdgeCouplingSet(np.array([[0.3, 0.1]]))
    for _ in range(20):
        beta = rng.uniform(0.1, 3)
        w1, w2, q1, q2 = rng.normal(size=(4, 2))
        z1, z2 = w1 + beta * q1, w2 + beta * q2
        pz1, pz2 = cset.project(0, z1 / beta, z2 / beta)
        expect = z1 - beta * pz1
        assert np.allclose(edge_prox(beta, w1, w2, q1, q2, [0.3, 0.1]), expect)
        assert np.allclose(z2 - beta * pz2, expect)


def test_kkt_residual_examples():
    inst = two_prosumer()
    sol = solve_reference(inst)
    stat, coup = kkt_residual(inst, sol.p, sol.w)
    assert stat <= 1e-6 and coup <= 1e-6
    lossy = single_edge(T=3, loss=0.25)
    stat, coup = kkt_residual(lossy, np.zeros(lossy.n), np.zeros(lossy.n))
    assert coup == pytest.approx(np.linalg.norm(lossy.edge_loss()))
    flat = single_edge(T=1, b=0.0)
    assert kkt_residual(flat, np.zeros(2), np.zeros(2))[0] == 0.0


def test_kkt_residual_dimension_mismatch():
    with pytest.raises(ValueError):
        kkt_residual(two_prosumer(), np.zeros(3), np.zeros(2))


def test_project_all_dimension_mismatch(six):
    with pytest.raises(ValueError):
        project_all(six, np.zeros(3))
