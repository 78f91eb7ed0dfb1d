"""Convergence diagnostics in the step-size metric, plus step-size bound checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TsWeights", "ConvergenceReport", "AlreadyConverged", "ts_norm", "fejer_slack",
           "rate_fit", "tail_window", "contraction_check", "dense_operators", "bound_suite",
           "CSV_COLUMNS", "DENSE_LIMIT"]

CSV_COLUMNS = ("k", "dist_ts", "coupling", "stationarity", "fejer_slack", "messages",
               "sim_time_ms")

# dense operator matrices are only built up to this stacked dimension
DENSE_LIMIT = 200


@dataclass(frozen=True)
class TsWeights:
    """Diagonal of the step-size metric: ``1/beta`` on prices, ``1/alpha`` on trades."""

    dual: np.ndarray
    primal: np.ndarray

    def __post_init__(self):
        dual = np.asarray(self.dual, dtype=float)
        primal = np.asarray(self.primal, dtype=float)
        if np.any(dual <= 0) or np.any(primal <= 0):
            raise ValueError("metric weights must be strictly positive")
        object.__setattr__(self, "dual", dual)
        object.__setattr__(self, "primal", primal)

    @property
    def diag(self) -> np.ndarray:
        return np.concatenate([self.dual, self.primal])

    def condition_number(self) -> float:
        d = self.diag
        return float(d.max() / d.min())


def ts_norm(weights: TsWeights, U) -> float:
    U = np.asarray(U, dtype=float)
    d = weights.diag
    if U.shape != d.shape:
        raise ValueError(f"vector of length {U.size} does not match metric of size {d.size}")
    return math.sqrt(float(np.dot(d * U, U)))


def fejer_slack(weights: TsWeights, U_next, U_now, U_star) -> float:
    """``|U_next - U*|^2 - |U_now - U*|^2`` in the step-size metric."""
    U_star = np.asarray(U_star, dtype=float)
    a = ts_norm(weights, np.asarray(U_next, dtype=float) - U_star)
    b = ts_norm(weights, np.asarray(U_now, dtype=float) - U_star)
    return a * a - b * b


@dataclass
class ConvergenceReport:
    """Column store of per-iteration (or per-check) measurements."""

    columns: dict = field(default_factory=lambda: {c: [] for c in CSV_COLUMNS + ("step",)})
    meta: dict = field(default_factory=dict)

    def append(self, **values):
        for key in self.columns:
            self.columns[key].append(values.get(key, math.nan))

    def extend(self, **arrays):
        n = len(next(iter(arrays.values())))
        for key in self.columns:
            vals = arrays.get(key)
            self.columns[key].extend([float(x) for x in vals] if vals is not None
                                     else [math.nan] * n)

    def __len__(self) -> int:
        return len(self.columns["k"])

    def __getitem__(self, key) -> np.ndarray:
        return np.asarray(self.columns[key], dtype=float)

    @property
    def last(self) -> dict:
        return {key: vals[-1] for key, vals in self.columns.items() if vals}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in range(len(self)):
            row = []
            for key in CSV_COLUMNS:
                v = self.columns[key][r]
                if key in ("k", "messages"):
                    row.append(str(int(v)))
                else:
                    row.append(repr(float(v)))
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def contraction_check(report: ConvergenceReport, slack_tol: float = 1e-12) -> dict:
    """Summarize whether a run contracted.

    A run fails to contract when it did not converge and either the
    distance to the optimum grew at some record (positive Fejer slack) or,
    without an oracle, the last residual is no smaller than the first.
    """
    slack = report["fejer_slack"]
    finite = slack[np.isfinite(slack)]
    resid = np.maximum(report["coupling"], report["stationarity"])
    converged = bool(report.meta.get("converged", False))
    violations = int(np.sum(finite > slack_tol))
    stalled = bool(resid.size > 1 and not resid[-1] < resid[0])
    return {"converged": converged,
            "fejer_violations": violations,
            "max_fejer_slack": float(finite.max()) if finite.size else math.nan,
            "residual_first": float(resid[0]) if resid.size else math.nan,
            "residual_last": float(resid[-1]) if resid.size else math.nan,
            "contracts": converged or (violations == 0 and not stalled)}


class AlreadyConverged(ValueError):
    """The fitting window contains non-positive distances."""


def tail_window(report: ConvergenceReport, floor: float = 1e-10) -> slice:
    """Last half of the records whose distance is still above ``floor``."""
    dist = report["dist_ts"]
    above = np.flatnonzero(np.isfinite(dist) & (dist > floor))
    if above.size == 0:
        return slice(0, 0)
    stop = int(above[-1]) + 1
    return slice(stop // 2, stop)


def rate_fit(report, window=None) -> tuple[float, float]:
    """Least-squares fit of ``log dist`` against ``k``.

    Parameters
    ----------
    report : ConvergenceReport or array_like
        Either a report (its ``k`` and ``dist_ts`` columns are used) or a bare
        sequence of distances indexed ``0, 1, ...``.
    window : slice, optional
        Records to fit; defaults to :func:`tail_window`.

    Returns
    -------
    rate : float
        ``exp(slope)``; below 1 for a converging sequence.
    r_squared : float
        Coefficient of determination of the fit (1 for a constant sequence).
    """
    if isinstance(report, ConvergenceReport):
        ks, dist = report["k"], report["dist_ts"]
        if window is None:
            window = tail_window(report)
    else:
        dist = np.asarray(report, dtype=float)
        ks = np.arange(dist.size, dtype=float)
        if window is None:
            window = slice(None)
    ks, dist = ks[window], dist[window]
    if dist.size < 10:
        raise ValueError("need at least 10 records in the fitting window")
    if np.any(~(dist > 0)):
        raise AlreadyConverged("window contains non-positive distances")
    y = np.log(dist)
    slope, intercept = np.polyfit(ks, y, 1)
    resid = y - (slope * ks + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    # a flat sequence leaves only rounding noise in both sums
    flat = ss_tot <= 1e-24 * max(1.0, float(np.sum(y * y)))
    r2 = 1.0 if flat else 1.0 - ss_res / ss_tot
    return float(np.exp(slope)), r2


def dense_operators(instance, steps) -> dict:
    """Dense step-size and bound matrices in the stacked ``U = [w; p]`` layout.

    In the shared coordinate layout the pairing operator between trades and
    prices is the identity, so every block below is diagonal.
    """
    from .problem import smoothness_constants

    n = instance.n
    alpha_c, beta_c = steps.per_coord(instance)
    L_f, _, kappa_f = smoothness_constants(instance)
    I = np.eye(n)
    Lb = np.diag(1.0 / beta_c)
    La = np.diag(1.0 / alpha_c)
    Z = np.zeros((n, n))
    T_s = np.block([[Lb, Z], [Z, La]])
    T_H = np.block([[Lb, Z], [I, La]])
    T_M = np.block([[Z, -I], [I, Z]])
    T_p_tilde = np.block([[Lb, -0.5 * I], [-0.5 * I, La]])
    T_q = np.block([[Z, Z], [Z, 0.25 * L_f * I]])
    T_d = T_p_tilde - T_q
    T_q_tilde = 2.0 * kappa_f * T_q
    return {"T_s": T_s, "T_H": T_H, "T_M": T_M, "T_d": T_d, "T_p_tilde": T_p_tilde,
            "T_q": T_q, "T_q_tilde": T_q_tilde,
            "fejer": 2.0 * T_d - T_s,
            "nonexpansive": 2.0 * T_p_tilde - T_q_tilde - T_s}


def bound_suite(instance, steps, activation=None, d: int = 0, theta=None) -> dict:
    """Evaluate every checkable step-size precondition; never raises on violations."""
    from .syn import async_alpha_bound, sync_alpha_bound

    sync_b = sync_alpha_bound(instance, steps.beta)
    async_b = async_alpha_bound(instance, steps.beta)
    out = {
        "alpha": steps.alpha.tolist(),
        "sync_alpha_bound": sync_b.tolist(),
        "async_alpha_bound": async_b.tolist(),
        "sync_alpha_ok": bool(np.all(steps.alpha < sync_b)),
        "async_alpha_ok": bool(np.all(steps.alpha <= async_b * (1 + 1e-12))),
        "kappa_s": steps.weights(instance).condition_number(),
        "gamma": "not computable (metric-subregularity constant unknown)",
    }
    if activation is not None:
        from .asyn import theta_bound

        tb = theta_bound(steps, activation, d, instance)
        out["kappa_P"] = activation.kappa
        out["theta_bound"] = tb
        if theta is not None:
            th = np.broadcast_to(np.asarray(theta, dtype=float), (instance.m,))
            out["theta"] = th.tolist()
            out["theta_ok"] = bool(np.all((th > 0) & (th <= tb * (1 + 1e-12))))
    if 2 * instance.n <= DENSE_LIMIT:
        ops = dense_operators(instance, steps)
        fe = float(np.linalg.eigvalsh(ops["fejer"]).min())
        ne = float(np.linalg.eigvalsh(ops["nonexpansive"]).min())
        out["fejer_matrix_min_eig"] = fe
        out["fejer_matrix_ok"] = fe > 0.0
        out["nonexpansive_matrix_min_eig"] = ne
        out["nonexpansive_matrix_ok"] = ne >= -1e-10
    else:
        out["fejer_matrix_ok"] = None
        out["nonexpansive_matrix_ok"] = None
    checks = [out["sync_alpha_ok"], out.get("fejer_matrix_ok")]
    out["all_sync_ok"] = all(c for c in checks if c is not None)
    return out
