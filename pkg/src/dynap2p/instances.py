"""Small built-in instances: the analytic two-prosumer case and random ones."""

from __future__ import annotations

import numpy as np

from .problem import (ConstraintProfile, CostProfile, ProblemInstance, RoleSchedule,
                      TradingNetwork, build_instance)

__all__ = ["two_prosumer", "single_edge", "random_instance"]


def two_prosumer() -> ProblemInstance:
    """``min p1^2 - 4 p1 + 2 p2^2 + 2 p2`` with ``p1 + p2 = 0``; optimum ``(1, -1)``."""
    net = TradingNetwork(2, ((0, 1),))
    roles = RoleSchedule(2, (frozenset({0}),))
    costs = CostProfile(a={(0, 1): [1.0], (1, 0): [2.0]},
                        b_trade={(0, 1): [-4.0], (1, 0): [2.0]})
    cons = ConstraintProfile(p_min=np.array([[0.0], [-10.0]]), p_max=np.array([[10.0], [0.0]]),
                             loss={(0, 1): [0.0]})
    return build_instance(net, 1, roles, costs, cons)


def single_edge(T: int = 1, a=1.0, b=0.0, loss=0.0) -> ProblemInstance:
    net = TradingNetwork(2, ((0, 1),))
    roles = RoleSchedule(2, tuple(frozenset({0}) for _ in range(T)))
    costs = CostProfile(a={(0, 1): np.full(T, a), (1, 0): np.full(T, a)},
                        b_trade={(0, 1): np.full(T, b), (1, 0): np.full(T, b)})
    cons = ConstraintProfile(p_min=np.array([[0.0] * T, [-10.0] * T]),
                             p_max=np.array([[10.0] * T, [0.0] * T]),
                             loss={(0, 1): np.full(T, loss)})
    return build_instance(net, T, roles, costs, cons)


def random_instance(rng: np.random.Generator, m: int = 4, T: int = 2,
                    extra_edges: int = 1, a_range=(0.5, 2.0)) -> ProblemInstance:
    """Random feasible instance on a connected graph.

    Edges joining two prosumers of the same role in some period carry zero
    loss there, which keeps the instance feasible (trading ``p = loss`` from
    seller to buyer and nothing back always is).
    """
    edges = set()
    order = rng.permutation(m)
    for k in range(1, m):
        u, v = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(u, v), max(u, v)))
    candidates = [(i, j) for i in range(m) for j in range(i + 1, m) if (i, j) not in edges]
    rng.shuffle(candidates)
    edges.update(candidates[:extra_edges])
    net = TradingNetwork(m, tuple(sorted(edges)))

    seller = rng.random((T, m)) < 0.5
    for t in range(T):
        if seller[t].all() or not seller[t].any():
            seller[t, rng.integers(0, m)] ^= True
    roles = RoleSchedule(m, tuple(frozenset(np.flatnonzero(seller[t]).tolist())
                                  for t in range(T)))

    a, bt, loss = {}, {}, {}
    for i, j in net.edges:
        a[(i, j)] = rng.uniform(*a_range, T)
        a[(j, i)] = rng.uniform(*a_range, T)
        bt[(i, j)] = rng.uniform(-3, 3, T)
        bt[(j, i)] = rng.uniform(-3, 3, T)
        lo_ = rng.uniform(0, 0.5, T)
        lo_[seller[:, i] == seller[:, j]] = 0.0
        loss[(i, j)] = lo_
    p_min = np.empty((m, T))
    p_max = np.empty((m, T))
    for i in range(m):
        for t in range(T):
            need = sum(loss[e][t] for e in net.edges if i in e)
            if seller[t, i]:
                p_min[i, t] = 0.0
                p_max[i, t] = need + rng.uniform(1, 6)
            else:
                p_min[i, t] = -rng.uniform(1, 6)
                p_max[i, t] = 0.0
    costs = CostProfile(a=a, b_trade=bt)
    return build_instance(net, T, roles, costs, ConstraintProfile(p_min, p_max, loss))
