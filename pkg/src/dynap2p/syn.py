"""Synchronous primal-dual iteration (Jacobi sweep over all prosumers)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import ConvergenceReport, TsWeights, ts_norm
from .operators import ProjectionError, edge_prox_flat, kkt_residual, project_all
from .problem import ProblemInstance, smoothness_constants

__all__ = ["StepConfig", "SolverState", "DivergenceError", "default_steps", "sync_alpha_bound",
           "async_alpha_bound", "syn_step", "run_syn", "initial_state"]


class DivergenceError(ArithmeticError):
    """Non-finite iterate; the step sizes violate their bound."""


@dataclass(frozen=True)
class StepConfig:
    """Uncoordinated step sizes: ``alpha`` per prosumer, ``beta`` per edge."""

    alpha: np.ndarray
    beta: np.ndarray
    sigma: float = 1.0
    mode: str = "sync"

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if np.any(alpha <= 0) or np.any(beta <= 0):
            raise ValueError("step sizes must be strictly positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def per_coord(self, instance: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
        """``(alpha_c, beta_c)`` expanded onto the shared coordinate layout."""
        return self.alpha[instance.owner], self.beta[instance.edge_index]

    def weights(self, instance: ProblemInstance) -> TsWeights:
        alpha_c, beta_c = self.per_coord(instance)
        return TsWeights(dual=1.0 / beta_c, primal=1.0 / alpha_c)


@dataclass
class SolverState:
    k: int
    p: np.ndarray
    w: np.ndarray
    w_bar: np.ndarray = field(default=None, repr=False)

    @property
    def U(self) -> np.ndarray:
        return np.concatenate([self.w, self.p])

    def copy(self) -> "SolverState":
        return SolverState(self.k, self.p.copy(), self.w.copy(),
                           None if self.w_bar is None else self.w_bar.copy())


def initial_state(instance: ProblemInstance, p0=None, w0=None) -> SolverState:
    p = np.zeros(instance.n) if p0 is None else np.array(p0, dtype=float)
    w = np.zeros(instance.n) if w0 is None else np.array(w0, dtype=float)
    if p.shape != (instance.n,) or w.shape != (instance.n,):
        raise ValueError(f"initial vectors must have length {instance.n}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
        raise ValueError("initial vectors must be finite")
    return SolverState(0, p, w)


def _max_beta(instance: ProblemInstance, beta: np.ndarray) -> np.ndarray:
    """``|| sum_j beta_ij Omega_ij' Omega_ij ||`` per prosumer (diagonal, so a max)."""
    out = np.zeros(instance.m)
    for e, (i, j) in enumerate(instance.edges):
        out[i] = max(out[i], beta[e])
        out[j] = max(out[j], beta[e])
    return out


def sync_alpha_bound(instance: ProblemInstance, beta) -> np.ndarray:
    L_f, _, _ = smoothness_constants(instance)
    return 1.0 / (L_f / 2.0 + _max_beta(instance, np.asarray(beta, dtype=float)))


def async_alpha_bound(instance: ProblemInstance, beta) -> np.ndarray:
    L_f, _, kappa_f = smoothness_constants(instance)
    return 1.0 / (kappa_f * L_f / 2.0 + _max_beta(instance, np.asarray(beta, dtype=float)))


def default_steps(instance: ProblemInstance, sigma: float = 0.99, mode: str = "sync",
                  beta=None) -> StepConfig:
    """Step sizes at fraction ``sigma`` of the primal bound.

    ``mode="sync"`` uses the Fejer bound ``1/(L_f/2 + max beta)``;
    ``mode="async"`` the stricter nonexpansiveness bound
    ``1/(kappa_f L_f/2 + max beta)``. ``beta`` defaults to 1 on every edge.
    """
    # sigma = 1 returns the bound itself, useful for reporting
    if not 0.0 < sigma <= 1.0:
        raise ValueError("sigma must lie in (0, 1]")
    if mode not in ("sync", "async"):
        raise ValueError("mode must be 'sync' or 'async'")
    n_edges = len(instance.edges)
    beta = np.ones(n_edges) if beta is None else np.broadcast_to(
        np.asarray(beta, dtype=float), (n_edges,)).copy()
    bound = sync_alpha_bound(instance, beta) if mode == "sync" else async_alpha_bound(instance, beta)
    return StepConfig(alpha=sigma * bound, beta=beta, sigma=sigma, mode=mode)


def syn_step(instance: ProblemInstance, steps: StepConfig, state: SolverState) -> SolverState:
    """One synchronous iteration; every read uses the iterate ``k``."""
    alpha_c, beta_c = steps.per_coord(instance)
    p, w = state.p, state.w
    w_bar = edge_prox_flat(instance, beta_c, p, w)
    v = p - alpha_c * (2.0 * instance.a * p + instance.b + w_bar)
    p_new = project_all(instance, v)
    w_new = w_bar + beta_c * (p_new - p)
    return SolverState(state.k + 1, p_new, w_new, w_bar)


def run_syn(instance: ProblemInstance, steps: StepConfig, init: SolverState | None = None,
            tol: float = 1e-8, max_iter: int = 10_000, oracle=None,
            compute_ms=1.0, latency_ms=0.0):
    """Iterate :func:`syn_step` until the residual criterion or ``max_iter``.

    The criterion is ``max(coupling, stationarity, successive T_s-distance) <= tol``.
    Returns ``(state, report)``; the report has one record per iterate,
    including iterate 0. ``compute_ms``/``latency_ms`` (scalar or per
    prosumer) drive the simulated wall time: each iteration waits for the
    slowest prosumer and the slowest message.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    state = initial_state(instance) if init is None else init.copy()
    weights = steps.weights(instance)
    report = ConvergenceReport()
    star = None if oracle is None else oracle.U
    per_iter_ms = float(np.max(compute_ms)) + float(np.max(latency_ms))
    msgs_per_iter = 2 * len(instance.edges)

    def record(st, prev_dist, step_dist):
        stat, coup = kkt_residual(instance, st.p, st.w)
        dist = math.nan if star is None else ts_norm(weights, st.U - star)
        slack = math.nan
        if star is not None and prev_dist is not None:
            slack = dist * dist - prev_dist * prev_dist
        report.append(k=st.k, dist_ts=dist, coupling=coup, stationarity=stat,
                      fejer_slack=slack, messages=st.k * msgs_per_iter,
                      sim_time_ms=st.k * per_iter_ms, step=step_dist)
        return dist, max(coup, stat)

    def overflowed(k):
        return DivergenceError(
            f"non-finite iterate at k={k}; primal step exceeds the Fejer bound")

    try:
        dist, resid = record(state, None, math.nan)
    except ProjectionError as exc:
        raise overflowed(state.k) from exc
    report.meta["converged"] = bool(math.isinf(tol) or resid <= tol)
    if report.meta["converged"]:
        return state, report
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                new = syn_step(instance, steps, state)
            except ProjectionError as exc:
                raise overflowed(state.k + 1) from exc
        if not (np.all(np.isfinite(new.p)) and np.all(np.isfinite(new.w))):
            raise overflowed(new.k)
        step_dist = ts_norm(weights, new.U - state.U)
        try:
            dist, resid = record(new, dist, step_dist)
        except ProjectionError as exc:
            raise overflowed(new.k) from exc
        state = new
        if max(resid, step_dist) <= tol:
            report.meta["converged"] = True
            break
    return state, report
