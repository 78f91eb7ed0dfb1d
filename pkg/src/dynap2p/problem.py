"""Dynamic peer-to-peer energy-management problem.

A :class:`ProblemInstance` stores every per-coordinate quantity in one flat
layout shared by the primal vector ``p`` and the edge prices ``w``:

* prosumer ``i`` owns the contiguous block ``offset[i]:offset[i + 1]`` of
  length ``T * deg(i)``;
* inside that block the coordinate of trader ``j`` at period ``t`` (both
  zero-based) is ``t * deg(i) + slot(i, j)``, where ``slot`` is the position of
  ``j`` in the ascending neighbour list of ``i`` (time-major layout).

The price half ``w_{(i,j),i}`` lives at the same coordinates as
``p_{i,j,t}``, so the whole dual vector has the same length as ``p``.
``mate[c]`` is the coordinate of the reciprocal trade ``p_{j,i,t}``.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InstanceError",
    "TradingNetwork",
    "RoleSchedule",
    "CostProfile",
    "ConstraintProfile",
    "ProblemInstance",
    "build_instance",
    "cost_value",
    "cost_gradient",
    "social_cost",
    "smoothness_constants",
]


class InstanceError(ValueError):
    """Raised when problem data violate a structural invariant."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TradingNetwork:
    """Undirected, connected trading graph over prosumers ``0..m-1``."""

    m: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise InstanceError("prosumer count must be positive")
        canon = []
        seen = set()
        for e in self.edges:
            i, j = (int(x) for x in e)
            if i == j:
                raise InstanceError(f"self-loop on prosumer {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise InstanceError(f"edge ({i}, {j}) references an unknown prosumer")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InstanceError(f"edge {key} listed more than once")
            seen.add(key)
            canon.append(key)
        canon.sort()
        object.__setattr__(self, "edges", tuple(canon))
        nbrs = [[] for _ in range(self.m)]
        for i, j in canon:
            nbrs[i].append(j)
            nbrs[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(n)) for n in nbrs))
        if self.m > 1 and not self.is_connected():
            raise InstanceError("trading graph is disconnected; a connected network is required")

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.m

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def slot(self, i: int, j: int) -> int:
        """Position of ``j`` in the neighbour list of ``i``."""
        try:
            return self.neighbors[i].index(j)
        except ValueError:
            raise InstanceError(f"{j} is not a trader of {i}") from None


@dataclass(frozen=True)
class RoleSchedule:
    """Seller/buyer partition of the prosumers for every period.

    ``sellers[t]`` lists the sellers at period ``t``; everybody else buys.
    If ``buyers`` is given it must be the exact complement.
    """

    m: int
    sellers: tuple[frozenset[int], ...]
    buyers: tuple[frozenset[int], ...] | None = None

    def __post_init__(self):
        sellers = tuple(frozenset(int(x) for x in s) for s in self.sellers)
        everyone = frozenset(range(self.m))
        for t, s in enumerate(sellers):
            if not s <= everyone:
                raise InstanceError(f"period {t}: seller set references unknown prosumers")
        if self.buyers is not None:
            buyers = tuple(frozenset(int(x) for x in b) for b in self.buyers)
            if len(buyers) != len(sellers):
                raise InstanceError("seller and buyer schedules have different lengths")
            for t, (s, b) in enumerate(zip(sellers, buyers)):
                if s & b or (s | b) != everyone:
                    raise InstanceError(
                        f"period {t}: sellers and buyers must partition the prosumers")
            object.__setattr__(self, "buyers", buyers)
        object.__setattr__(self, "sellers", sellers)

    @property
    def horizon(self) -> int:
        return len(self.sellers)

    def is_seller(self) -> np.ndarray:
        """Boolean array of shape ``(T, m)``."""
        out = np.zeros((self.horizon, self.m), dtype=bool)
        for t, s in enumerate(self.sellers):
            out[t, sorted(s)] = True
        return out


@dataclass(frozen=True)
class CostProfile:
    """Per directed trade ``(i, j)`` coefficient arrays of length ``T``.

    The linear coefficient entering the objective is
    ``b_trade + b_fee - b_rep``; ``c`` is a constant only used for reporting.
    Any coefficient table left out defaults to zero.
    """

    a: Mapping[tuple[int, int], np.ndarray]
    b_trade: Mapping[tuple[int, int], np.ndarray]
    b_fee: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    b_rep: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)
    c: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class ConstraintProfile:
    """Set-point bounds ``(m, T)`` and per-edge transport losses."""

    p_min: np.ndarray
    p_max: np.ndarray
    loss: Mapping[tuple[int, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    network: TradingNetwork
    horizon: int
    roles: RoleSchedule
    costs: CostProfile
    constraints: ConstraintProfile
    # flat coordinate layout
    offset: np.ndarray
    owner: np.ndarray
    peer: np.ndarray
    period: np.ndarray
    mate: np.ndarray
    edge_index: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    loss: np.ndarray
    # one projection group per (prosumer, period), contiguous in the layout
    group_start: np.ndarray
    group_stop: np.ndarray
    group_sign: np.ndarray
    group_lo: np.ndarray
    group_hi: np.ndarray
    ids: tuple = ()

    @property
    def m(self) -> int:
        return self.network.m

    @property
    def n(self) -> int:
        """Total number of primal coordinates."""
        return int(self.offset[-1])

    @property
    def edges(self):
        return self.network.edges

    def block(self, i: int) -> slice:
        return slice(int(self.offset[i]), int(self.offset[i + 1]))

    def coord(self, i: int, j: int, t: int) -> int:
        deg = self.network.degree(i)
        return int(self.offset[i]) + t * deg + self.network.slot(i, j)

    def split(self, p: np.ndarray) -> list[np.ndarray]:
        return [p[self.block(i)] for i in range(self.m)]

    def A_diag(self, i: int) -> np.ndarray:
        return self.a[self.block(i)]

    def b_vec(self, i: int) -> np.ndarray:
        return self.b[self.block(i)]

    # selection maps as gathers

    def xi(self, i: int, p_i: np.ndarray) -> np.ndarray:
        """Per-period set point ``sum_j p_{i,j,t}``."""
        deg = self.network.degree(i)
        return np.asarray(p_i).reshape(self.horizon, deg).sum(axis=1)

    def omega(self, i: int, j: int, p_i: np.ndarray) -> np.ndarray:
        """Trades of ``i`` with ``j`` over the horizon."""
        deg = self.network.degree(i)
        return np.asarray(p_i).reshape(self.horizon, deg)[:, self.network.slot(i, j)]

    def omega_T(self, i: int, j: int, v: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`omega` (scatter into ``i``'s block)."""
        deg = self.network.degree(i)
        out = np.zeros((self.horizon, deg))
        out[:, self.network.slot(i, j)] = v
        return out.ravel()

    def psi(self, edge: int, p: np.ndarray) -> np.ndarray:
        i, j = self.edges[edge]
        return np.concatenate([self.omega(i, j, p[self.block(i)]),
                               self.omega(j, i, p[self.block(j)])])

    # dense forms, only for oracles and bound checks on small instances

    def xi_matrix(self, i: int) -> np.ndarray:
        deg = self.network.degree(i)
        return np.kron(np.eye(self.horizon), np.ones((1, deg)))

    def omega_matrix(self, i: int, j: int) -> np.ndarray:
        deg = self.network.degree(i)
        sel = np.zeros((1, deg))
        sel[0, self.network.slot(i, j)] = 1.0
        return np.kron(np.eye(self.horizon), sel)

    def psi_matrix(self) -> np.ndarray:
        """Dense selector mapping ``p`` to the paired trades, in ``w`` layout.

        Row ``r`` picks ``p[r]``, i.e. this is the identity in the shared
        layout; the reciprocity sum of an edge is ``p[c] + p[mate[c]]``.
        """
        return np.eye(self.n)

    def coupling_matrix(self) -> np.ndarray:
        """One row per (edge, period): ``p_{i,j,t} + p_{j,i,t}``."""
        T = self.horizon
        rows = np.zeros((len(self.edges) * T, self.n))
        for e, (i, j) in enumerate(self.edges):
            for t in range(T):
                rows[e * T + t, self.coord(i, j, t)] = 1.0
                rows[e * T + t, self.coord(j, i, t)] = 1.0
        return rows

    def edge_loss(self) -> np.ndarray:
        """Losses as an array of shape ``(|E|, T)``."""
        return np.array([self.constraints.loss[e] for e in self.edges], dtype=float)

    def edge_coords(self) -> np.ndarray:
        """Coordinate of ``p_{i,j,t}`` (``i < j``) as an ``(|E|, T)`` array."""
        out = np.empty((len(self.edges), self.horizon), dtype=np.int64)
        for e, (i, j) in enumerate(self.edges):
            for t in range(self.horizon):
                out[e, t] = self.coord(i, j, t)
        return out


def _per_time(x, T: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (T,):
        raise InstanceError(f"{what}: expected {T} per-period values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InstanceError(f"{what}: non-finite value")
    return arr


def build_instance(network: TradingNetwork, horizon: int, roles: RoleSchedule,
                   costs: CostProfile, constraints: ConstraintProfile,
                   ids: Iterable | None = None) -> ProblemInstance:
    """Validate problem data and materialize the flat coordinate layout.

    Raises
    ------
    InstanceError
        If the graph is invalid, some ``a <= 0``, a bound pair is inverted, a
        loss is negative or defined asymmetrically, the role schedule does not
        partition the prosumers, or a per-period feasible set is empty.
    """
    m, T = network.m, int(horizon)
    if T < 1:
        raise InstanceError("horizon must be positive")
    if roles.m != m or roles.horizon != T:
        raise InstanceError("role schedule does not match network size and horizon")

    deg = np.array([network.degree(i) for i in range(m)], dtype=np.int64)
    if m > 1 and np.any(deg == 0):
        raise InstanceError("every prosumer needs at least one trader")
    offset = np.zeros(m + 1, dtype=np.int64)
    offset[1:] = np.cumsum(T * deg)
    n = int(offset[-1])

    owner = np.empty(n, dtype=np.int64)
    peer = np.empty(n, dtype=np.int64)
    period = np.empty(n, dtype=np.int64)
    for i in range(m):
        blk = np.arange(offset[i], offset[i + 1])
        owner[blk] = i
        period[blk] = (blk - offset[i]) // deg[i]
        peer[blk] = np.array(network.neighbors[i], dtype=np.int64)[(blk - offset[i]) % deg[i]]

    def coord(i, j, t):
        return int(offset[i]) + t * int(deg[i]) + network.slot(i, j)

    edge_id = {e: k for k, e in enumerate(network.edges)}
    mate = np.empty(n, dtype=np.int64)
    edge_index = np.empty(n, dtype=np.int64)
    for c in range(n):
        i, j, t = owner[c], peer[c], period[c]
        mate[c] = coord(j, i, t)
        edge_index[c] = edge_id[(min(i, j), max(i, j))]

    # losses: one value per unordered pair
    loss_by_edge = {}
    for key, val in constraints.loss.items():
        i, j = (int(x) for x in key)
        e = (min(i, j), max(i, j))
        if e not in edge_id:
            raise InstanceError(f"loss given for non-edge {e}")
        arr = _per_time(val, T, f"loss{e}")
        if e in loss_by_edge and not np.array_equal(loss_by_edge[e], arr):
            raise InstanceError(f"asymmetric loss definition on edge {e}")
        loss_by_edge[e] = arr
    for e in network.edges:
        if e not in loss_by_edge:
            loss_by_edge[e] = np.zeros(T)
        if np.any(loss_by_edge[e] < 0):
            raise InstanceError(f"transport loss on edge {e} must be nonnegative")

    directed = [(i, j) for i in range(m) for j in network.neighbors[i]]

    def gather(table, name, default=None):
        for key in table:
            if tuple(int(x) for x in key) not in set(directed):
                raise InstanceError(f"{name} given for non-trade {tuple(key)}")
        out = np.empty(n)
        for (i, j) in directed:
            if (i, j) in table:
                arr = _per_time(table[(i, j)], T, f"{name}{(i, j)}")
            elif default is not None:
                arr = np.full(T, default)
            else:
                raise InstanceError(f"{name} missing for trade {(i, j)}")
            for t in range(T):
                out[coord(i, j, t)] = arr[t]
        return out

    a = gather(costs.a, "a")
    if np.any(a <= 0):
        bad = int(np.argmin(a))
        raise InstanceError(
            f"quadratic coefficient a must be strictly positive (strict convexity); "
            f"a[{owner[bad]},{peer[bad]},{period[bad]}] = {a[bad]}")
    b_trade = gather(costs.b_trade, "b_trade")
    b_fee = gather(costs.b_fee, "b_fee", 0.0)
    b_rep = gather(costs.b_rep, "b_rep", 0.0)
    if np.any(b_fee < 0):
        raise InstanceError("network-fee coefficients must be nonnegative")
    if np.any(b_rep < 0):
        raise InstanceError("reputation coefficients must be nonnegative")
    c = gather(costs.c, "c", 0.0)
    b = b_trade + b_fee - b_rep

    loss = np.empty(n)
    for c_ in range(n):
        e = network.edges[edge_index[c_]]
        loss[c_] = loss_by_edge[e][period[c_]]

    p_min = np.asarray(constraints.p_min, dtype=float)
    p_max = np.asarray(constraints.p_max, dtype=float)
    if p_min.shape != (m, T) or p_max.shape != (m, T):
        raise InstanceError(f"bounds must have shape ({m}, {T})")
    if np.any(p_min > p_max):
        i, t = np.argwhere(p_min > p_max)[0]
        raise InstanceError(f"set-point bounds inverted for prosumer {i} at period {t}")

    seller = roles.is_seller()
    G = m * T
    g_start = np.empty(G, dtype=np.int64)
    g_stop = np.empty(G, dtype=np.int64)
    g_sign = np.empty(G)
    for i in range(m):
        for t in range(T):
            g = i * T + t
            g_start[g] = offset[i] + t * deg[i]
            g_stop[g] = g_start[g] + deg[i]
            g_sign[g] = 1.0 if seller[t, i] else -1.0
            if seller[t, i] and p_max[i, t] < 0:
                raise InstanceError(
                    f"empty feasible set: seller {i} at period {t} has negative upper bound")
            if not seller[t, i] and p_min[i, t] > 0:
                raise InstanceError(
                    f"empty feasible set: buyer {i} at period {t} has positive lower bound")
    for i, j in network.edges:
        for t in range(T):
            if seller[t, i] == seller[t, j]:
                if loss_by_edge[(i, j)][t] != 0:
                    raise InstanceError(
                        f"edge {(i, j)} joins two prosumers of the same role at period {t} "
                        "but carries a positive loss")
    g_lo = p_min.reshape(-1)
    g_hi = p_max.reshape(-1)

    return ProblemInstance(
        network=network, horizon=T, roles=roles, costs=costs, constraints=constraints,
        offset=_frozen(offset, np.int64), owner=_frozen(owner, np.int64),
        peer=_frozen(peer, np.int64), period=_frozen(period, np.int64),
        mate=_frozen(mate, np.int64), edge_index=_frozen(edge_index, np.int64),
        a=_frozen(a), b=_frozen(b), c=_frozen(c), loss=_frozen(loss),
        group_start=_frozen(g_start, np.int64), group_stop=_frozen(g_stop, np.int64),
        group_sign=_frozen(g_sign), group_lo=_frozen(g_lo), group_hi=_frozen(g_hi),
        ids=tuple(ids) if ids is not None else tuple(range(1, m + 1)),
    )


def _check_block(instance: ProblemInstance, i: int, p_i) -> np.ndarray:
    p_i = np.asarray(p_i, dtype=float)
    size = instance.horizon * instance.network.degree(i)
    if p_i.shape != (size,):
        raise ValueError(f"p_{i} must have shape ({size},), got {p_i.shape}")
    return p_i


def cost_value(instance: ProblemInstance, i: int, p_i) -> float:
    """Trading cost of prosumer ``i`` without the constant offsets."""
    p_i = _check_block(instance, i, p_i)
    return float(np.dot(instance.A_diag(i) * p_i, p_i) + np.dot(instance.b_vec(i), p_i))


def cost_gradient(instance: ProblemInstance, i: int, p_i) -> np.ndarray:
    p_i = _check_block(instance, i, p_i)
    return 2.0 * instance.A_diag(i) * p_i + instance.b_vec(i)


def social_cost(instance: ProblemInstance, p) -> float:
    """Total cost of all prosumers, constant offsets included."""
    p = np.asarray(p, dtype=float)
    return float(np.dot(instance.a * p, p) + np.dot(instance.b, p) + instance.c.sum())


def smoothness_constants(instance: ProblemInstance) -> tuple[float, float, float]:
    """Return ``(L_f, mu, kappa_f)`` of the objective's Hessian ``2A``."""
    L_f = 2.0 * float(instance.a.max())
    mu = 2.0 * float(instance.a.min())
    return L_f, mu, L_f / mu
