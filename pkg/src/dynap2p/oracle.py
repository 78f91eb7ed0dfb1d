"""Independent reference solutions used by tests and distance metrics.

Nothing here touches the Syn/Asyn iterations. The primary route is an exact
dual active-set QP solve of the whole problem; a projected-gradient route
with Dykstra alternating projections and a brute-force grid search serve as
cross-checks on small instances.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .operators import kkt_residual, project_all
from .problem import ProblemInstance
from .qp import QPInfeasible, solve_qp

__all__ = ["OracleSolution", "InfeasibleInstance", "solve_reference", "solve_pg_dykstra",
           "recover_dual", "grid_reference", "project_reference", "grid_project"]


class InfeasibleInstance(ValueError):
    pass


@dataclass
class OracleSolution:
    p: np.ndarray
    w: np.ndarray
    objective: float
    stationarity: float
    coupling: float
    method: str = "active-set"

    @property
    def U(self) -> np.ndarray:
        """Stacked ``[w; p]``."""
        return np.concatenate([self.w, self.p])

    def to_json(self, path=None) -> str:
        d = asdict(self)
        d["p"] = self.p.tolist()
        d["w"] = self.w.tolist()
        text = json.dumps(d, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "OracleSolution":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        d = json.loads(text)
        d["p"] = np.asarray(d["p"], dtype=float)
        d["w"] = np.asarray(d["w"], dtype=float)
        return cls(**d)


def _constraints(instance: ProblemInstance):
    """``E p = e`` (reciprocity) and ``C p >= c`` (orthant and set-point bounds)."""
    n = instance.n
    E = instance.coupling_matrix()
    e = instance.edge_loss().reshape(-1)
    rows, rhs, kinds = [], [], []
    for g in range(instance.group_start.size):
        lo_c, hi_c = instance.group_start[g], instance.group_stop[g]
        sign = instance.group_sign[g]
        for c in range(lo_c, hi_c):
            r = np.zeros(n)
            r[c] = sign
            rows.append(r)
            rhs.append(0.0)
            kinds.append(("sign", g, c))
        r = np.zeros(n)
        r[lo_c:hi_c] = 1.0
        if np.isfinite(instance.group_lo[g]):
            rows.append(r)
            rhs.append(instance.group_lo[g])
            kinds.append(("lo", g, -1))
        if np.isfinite(instance.group_hi[g]):
            rows.append(-r)
            rhs.append(-instance.group_hi[g])
            kinds.append(("hi", g, -1))
    return E, e, np.array(rows), np.array(rhs), kinds


def recover_dual(instance: ProblemInstance, p, tight_tol: float = 1e-9) -> np.ndarray:
    """Minimum-norm multiplier certificate for ``p`` on its tight faces.

    Returns the prices ``w`` in the shared layout (both halves of an edge
    carry the same value).
    """
    p = np.asarray(p, dtype=float)
    E, e, C, c, _ = _constraints(instance)
    grad = 2.0 * instance.a * p + instance.b
    scale = max(1.0, float(np.abs(p).max()), float(np.abs(grad).max()))
    tight = np.flatnonzero(C @ p - c <= tight_tol * scale)
    N = np.hstack([E.T, C[tight].T])
    q_eq, q = E.shape[0], N.shape[1]
    sel = np.zeros((q - q_eq, q))
    sel[np.arange(q - q_eq), q_eq + np.arange(q - q_eq)] = 1.0
    res = solve_qp(np.eye(q), np.zeros(q), N, grad, sel, np.zeros(q - q_eq), tol=1e-10)
    nu = res.x[:q_eq]
    w = np.empty(instance.n)
    T = instance.horizon
    for k, (i, j) in enumerate(instance.edges):
        for t in range(T):
            w[instance.coord(i, j, t)] = -nu[k * T + t]
            w[instance.coord(j, i, t)] = -nu[k * T + t]
    return w


def _finish(instance, p, method, dual=None) -> OracleSolution:
    w = recover_dual(instance, p) if dual is None else dual
    stat, coup = kkt_residual(instance, p, w)
    obj = float(np.dot(instance.a * p, p) + np.dot(instance.b, p))
    return OracleSolution(p=p, w=w, objective=obj, stationarity=stat, coupling=coup,
                          method=method)


def solve_reference(instance: ProblemInstance, tol: float = 1e-11,
                    max_iter: int = 100_000, method: str = "active-set") -> OracleSolution:
    """Solve the trading problem independently of the distributed algorithms.

    Parameters
    ----------
    instance : ProblemInstance
    tol : float
        Feasibility tolerance of the active-set solve, or the successive-iterate
        tolerance of the projected-gradient route.
    max_iter : int
        Iteration cap for the chosen route.
    method : {"active-set", "pg-dykstra"}

    Raises
    ------
    InfeasibleInstance
        If the reciprocity constraints cannot be met inside the feasible sets.
    """
    if method == "pg-dykstra":
        p = solve_pg_dykstra(instance, tol=tol, max_iter=max_iter)
        return _finish(instance, p, method)
    if method != "active-set":
        raise ValueError(f"unknown method {method!r}")
    E, e, C, c, _ = _constraints(instance)
    try:
        res = solve_qp(np.diag(2.0 * instance.a), instance.b, E, e, C, c,
                       tol=tol, max_iter=max_iter)
    except QPInfeasible as exc:
        raise InfeasibleInstance(str(exc)) from None
    return _finish(instance, res.x, method)


def _project_coupling(instance, x):
    r = 0.5 * (x + x[instance.mate] - instance.loss)
    return x - r


def _dykstra(instance, z, tol, max_iter):
    """Project ``z`` onto the intersection of the feasible sets and reciprocity."""
    x = z.copy()
    p_corr = np.zeros_like(z)
    q_corr = np.zeros_like(z)
    for _ in range(max_iter):
        y = _project_coupling(instance, x + p_corr)
        p_corr = x + p_corr - y
        x_new = project_all(instance, y + q_corr)
        q_corr = y + q_corr - x_new
        gap = np.abs(x_new - y).max()
        step = np.abs(x_new - x).max()
        x = x_new
        if gap <= tol and step <= tol:
            return x, gap
    return x, np.abs(x - _project_coupling(instance, x)).max()


def solve_pg_dykstra(instance: ProblemInstance, tol: float = 1e-10,
                     max_iter: int = 20_000, inner_iter: int = 20_000) -> np.ndarray:
    """Projected gradient with step ``1/L_f`` and Dykstra-projected iterates."""
    L = 2.0 * float(instance.a.max())
    x = np.zeros(instance.n)
    for _ in range(max_iter):
        z = x - (2.0 * instance.a * x + instance.b) / L
        x_new, gap = _dykstra(instance, z, 0.1 * tol, inner_iter)
        if gap > 1e-6:
            raise InfeasibleInstance(f"alternating projections stall with gap {gap:.3g}")
        if np.linalg.norm(x_new - x) <= tol:
            return x_new
        x = x_new
    return x


def grid_reference(instance: ProblemInstance, points: int | None = None,
                   final_step: float = 1e-3) -> np.ndarray:
    """Brute-force minimizer for instances with at most 6 primal coordinates.

    The reciprocity constraint fixes ``p_{j,i,t} = loss - p_{i,j,t}``, so the
    grid runs over one free coordinate per edge and period. Each refinement
    pass recenters a window of ten grid steps on the incumbent until the step
    is at most ``final_step``.
    """
    if instance.n > 6:
        raise ValueError("grid search is limited to 6 primal coordinates")
    free = instance.edge_coords().reshape(-1)
    mate = instance.mate[free]
    loss = instance.loss[free]
    if points is None:
        points = {1: 2001, 2: 201}.get(free.size, 41)
    span = float(max(np.abs(instance.group_lo).max(), np.abs(instance.group_hi).max())
                 + loss.max() + 1.0)
    center = np.zeros(free.size)
    half = np.full(free.size, span)
    while True:
        axes = [np.linspace(c - h, c + h, points) for c, h in zip(center, half)]
        grid = np.array(list(itertools.product(*axes)))
        P = np.zeros((grid.shape[0], instance.n))
        P[:, free] = grid
        P[:, mate] = loss - grid
        feas = np.ones(grid.shape[0], dtype=bool)
        for g in range(instance.group_start.size):
            blk = P[:, instance.group_start[g]:instance.group_stop[g]]
            sgn = instance.group_sign[g]
            tot = blk.sum(axis=1)
            feas &= np.all(sgn * blk >= -1e-12, axis=1)
            feas &= (tot >= instance.group_lo[g] - 1e-12) & (tot <= instance.group_hi[g] + 1e-12)
        if not feas.any():
            raise InfeasibleInstance("no feasible grid point")
        obj = (P * P) @ instance.a + P @ instance.b
        obj[~feas] = np.inf
        k = int(np.argmin(obj))
        step = 2 * half / (points - 1)
        if np.all(step <= final_step):
            return P[k]
        center = grid[k]
        half = 10 * step


def project_reference(seller: bool, lo: float, hi: float, v) -> np.ndarray:
    """Dense QP solution of the single-period projection problem."""
    v = np.asarray(v, dtype=float)
    n = v.size
    sign = 1.0 if seller else -1.0
    C = [sign * np.eye(n)]
    c = [np.zeros(n)]
    if np.isfinite(lo):
        C.append(np.ones((1, n)))
        c.append([lo])
    if np.isfinite(hi):
        C.append(-np.ones((1, n)))
        c.append([-hi])
    return solve_qp(np.eye(n), -v, None, None, np.vstack(C), np.concatenate(c), tol=1e-13).x


def _grid_pass(sign, lo, hi, v, remainder, points, final_step):
    """One refined grid search; returns the best feasible point found or ``None``.

    With ``remainder=None`` the grid runs over the coordinates themselves
    (orthant faces lie on the grid, sum faces do not). Otherwise the sum
    replaces coordinate ``remainder`` as a grid axis and that coordinate is
    recovered as the remainder, which puts the sum faces on the grid.
    """
    n = v.size
    span = float(np.abs(v).sum() + max(abs(x) for x in (lo, hi, 1.0) if np.isfinite(x)))
    s_lo, s_hi = max(lo, -span), min(hi, span)
    if sign > 0:
        s_lo = max(s_lo, 0.0)
    else:
        s_hi = min(s_hi, 0.0)
    center = np.zeros(n)
    half = np.full(n, span)
    if remainder is not None:
        center[remainder] = 0.5 * (s_lo + s_hi)
        half[remainder] = 0.5 * (s_hi - s_lo)
    best = None
    while True:
        axes = []
        for q in range(n):
            ax = np.linspace(center[q] - half[q], center[q] + half[q], points)
            ax = np.clip(ax, s_lo, s_hi) if q == remainder else sign * np.maximum(sign * ax, 0.0)
            axes.append(ax)
        Z = np.array(list(itertools.product(*axes)))
        X = Z.copy()
        if remainder is not None:
            others = [q for q in range(n) if q != remainder]
            X[:, remainder] = Z[:, remainder] - Z[:, others].sum(axis=1)
        tot = X.sum(axis=1)
        feas = np.all(sign * X >= 0, axis=1) & (tot >= lo) & (tot <= hi)
        d = np.sum((X - v) ** 2, axis=1)
        d[~feas] = np.inf
        k = int(np.argmin(d))
        if not np.isfinite(d[k]):
            return best
        best = X[k]
        step = 2 * half / (points - 1)
        if np.all(step <= final_step):
            return best
        center = Z[k]
        half = 3 * step


def grid_project(seller: bool, lo: float, hi: float, v, points: int = 41,
                 final_step: float = 1e-3) -> np.ndarray:
    """Grid-search projection (dimension at most 3) refined down to ``final_step``.

    Runs one refined grid over the coordinates and one per choice of
    remainder coordinate (see :func:`_grid_pass`) and keeps the closest
    feasible result, so every face of the set is reachable by some pass.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if n > 3:
        raise ValueError("grid projection is limited to dimension 3")
    sign = 1.0 if seller else -1.0
    best, best_d = None, np.inf
    for remainder in [None, *range(n)]:
        x = _grid_pass(sign, lo, hi, v, remainder, points, final_step)
        if x is not None and np.sum((x - v) ** 2) < best_d:
            best, best_d = x, float(np.sum((x - v) ** 2))
    if best is None:
        raise RuntimeError("grid contains no feasible point")
    return best
