"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves ``min 1/2 x'Gx + a'x  s.t.  E x = e,  C x >= c`` for small dense
problems. Used only as an independent reference; solvers never call it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QPResult", "QPInfeasible", "solve_qp"]


class QPInfeasible(ValueError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    eq_mult: np.ndarray      # multipliers of E x = e
    ineq_mult: np.ndarray    # multipliers of C x >= c, all >= 0
    active: np.ndarray       # indices of active inequalities
    iterations: int


def _kkt_step(G, N, n_p):
    """Return ``(z, r)`` with ``G z + N r = n_p`` and ``N' z = 0``."""
    n = G.shape[0]
    q = N.shape[1]
    if q == 0:
        return np.linalg.solve(G, n_p), np.zeros(0)
    K = np.zeros((n + q, n + q))
    K[:n, :n] = G
    K[:n, n:] = N
    K[n:, :n] = N.T
    rhs = np.concatenate([n_p, np.zeros(q)])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(G, a, E=None, e=None, C=None, c=None, tol=1e-11, max_iter=10_000) -> QPResult:
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float)
    C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    c = np.zeros(0) if c is None else np.asarray(c, dtype=float)
    n_eq, n_in = E.shape[0], C.shape[0]

    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(e).max(initial=0.0)),
                float(np.abs(c).max(initial=0.0)))
    x = np.linalg.solve(G, -a)

    # active constraints: ("eq", k, sign) or ("in", k, +1); normals as columns
    kinds: list[tuple[str, int, float]] = []
    u = np.zeros(0)

    def normals():
        cols = [(s * E[k] if kind == "eq" else C[k]) for kind, k, s in kinds]
        return np.array(cols).T if cols else np.zeros((n, 0))

    def add_constraint(kind, k, sign):
        nonlocal x, u
        n_p = sign * (E[k] if kind == "eq" else C[k])
        rhs = sign * (e[k] if kind == "eq" else c[k])
        u_plus = np.append(u, 0.0)
        it = 0
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("active-set iteration limit reached")
            s_p = n_p @ x - rhs
            if kind == "in" and s_p >= -tol * scale:
                u = u_plus[:-1]
                return
            N = normals()
            z, r = _kkt_step(G, N, n_p)
            t1, drop = np.inf, -1
            for idx, (kd, _, _) in enumerate(kinds):
                if kd == "in" and r[idx] > 1e-14:
                    ratio = u_plus[idx] / r[idx]
                    if ratio < t1:
                        t1, drop = ratio, idx
            zn = z @ n_p
            t2 = -s_p / zn if abs(zn) > 1e-14 * max(1.0, float(n_p @ n_p)) else np.inf
            if kind == "eq" and not np.isfinite(t2) and abs(s_p) <= tol * scale:
                u = u_plus[:-1]   # redundant equality
                return
            if not np.isfinite(t1) and not np.isfinite(t2):
                raise QPInfeasible("constraints are inconsistent")
            if not np.isfinite(t2):
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                del kinds[drop]
                u_plus = np.delete(u_plus, drop)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                kinds.append((kind, k, sign))
                u = u_plus
                return
            del kinds[drop]
            u_plus = np.delete(u_plus, drop)

    for k in range(n_eq):
        s = E[k] @ x - e[k]
        add_constraint("eq", k, -1.0 if s > 0 else 1.0)

    iterations = 0
    while True:
        iterations += 1
        if iterations > max_iter:
            raise RuntimeError("active-set iteration limit reached")
        if n_in == 0:
            break
        slack = C @ x - c
        in_set = {k for kind, k, _ in kinds if kind == "in"}
        slack[list(in_set)] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -tol * scale:
            break
        add_constraint("in", p, 1.0)

    # polish on the final active set
    N = normals()
    q = N.shape[1]
    if q:
        rhs_b = np.array([s * (e[k] if kind == "eq" else c[k]) for kind, k, s in kinds])
        K = np.zeros((n + q, n + q))
        K[:n, :n] = G
        K[:n, n:] = -N
        K[n:, :n] = N.T
        sol = np.linalg.lstsq(K, np.concatenate([-a, rhs_b]), rcond=None)[0]
        x_pol, u_pol = sol[:n], sol[n:]
        in_idx = [idx for idx, (kd, _, _) in enumerate(kinds) if kd == "in"]
        ok = (np.all(u_pol[in_idx] >= -1e-9 * scale)
              and np.all(C @ x_pol - c >= -tol * scale)
              and np.allclose(E @ x_pol, e, atol=tol * scale))
        if ok:
            x, u = x_pol, u_pol

    eq_mult = np.zeros(n_eq)
    ineq_mult = np.zeros(n_in)
    active = []
    for idx, (kind, k, s) in enumerate(kinds):
        if kind == "eq":
            eq_mult[k] = s * u[idx]
        else:
            ineq_mult[k] = max(u[idx], 0.0)
            active.append(k)
    return QPResult(x, eq_mult, ineq_mult, np.array(sorted(active), dtype=int), iterations)
