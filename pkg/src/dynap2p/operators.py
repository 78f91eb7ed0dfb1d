"""Feasible-set projections, the closed-form edge proximal map, KKT residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .problem import ProblemInstance

__all__ = ["ProjectionError", "ProsumerFeasibleSet", "EdgeCouplingSet", "project_feasible",
           "project_block", "project_all", "edge_prox", "edge_prox_flat", "kkt_residual"]


class ProjectionError(RuntimeError):
    """The multiplier search of a projection did not converge."""


@dataclass(frozen=True)
class ProsumerFeasibleSet:
    """Per (prosumer, period): role orthant intersected with a set-point interval.

    The role mask and both interval ends have shape ``(m, T)``.
    """

    seller: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        seller = np.asarray(self.seller, dtype=bool)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if not (seller.shape == lo.shape == hi.shape) or seller.ndim != 2:
            raise ValueError("role mask and interval ends must share one (m, T) shape")
        empty = (lo > hi) | (seller & (hi < 0)) | (~seller & (lo > 0))
        if empty.any():
            i, t = np.argwhere(empty)[0]
            raise ValueError(f"feasible set of prosumer {i} at period {t} is empty")
        object.__setattr__(self, "seller", seller)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_instance(cls, instance: ProblemInstance) -> "ProsumerFeasibleSet":
        return cls(instance.roles.is_seller().T, instance.constraints.p_min,
                   instance.constraints.p_max)

    def contains(self, i: int, t: int, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        sign = 1.0 if self.seller[i, t] else -1.0
        s = x.sum()
        return bool(np.all(sign * x >= -tol) and self.lo[i, t] - tol <= s <= self.hi[i, t] + tol)


@dataclass(frozen=True)
class EdgeCouplingSet:
    """``{(z1, z2): z1 + z2 = loss}`` per edge and period; ``loss`` is ``(|E|, T)``."""

    loss: np.ndarray

    def project(self, e: int, z1, z2):
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        r = 0.5 * (z1 + z2 - self.loss[e])
        return z1 - r, z2 - r


def project_feasible(fset: ProsumerFeasibleSet, i: int, t: int, v) -> np.ndarray:
    """Euclidean projection of ``v`` (one entry per trader) onto ``S_i`` at period ``t``."""
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a nonempty vector")
    out = np.empty_like(v)
    sign = 1.0 if fset.seller[i, t] else -1.0
    if kernels.project_group(v, 0, v.size, sign, float(fset.lo[i, t]), float(fset.hi[i, t]),
                             out):
        raise ProjectionError(f"projection for prosumer {i}, period {t} did not converge")
    return out


def project_all(instance: ProblemInstance, v, out=None) -> np.ndarray:
    """Project a full primal vector block by block."""
    v = np.ascontiguousarray(v, dtype=float)
    if v.shape != (instance.n,):
        raise ValueError(f"expected a vector of length {instance.n}")
    if out is None:
        out = np.empty_like(v)
    fails = kernels.project_groups(v, instance.group_start, instance.group_stop,
                                   instance.group_sign, instance.group_lo, instance.group_hi, out)
    if fails:
        raise ProjectionError(f"{fails} projection group(s) did not converge")
    return out


def project_block(instance: ProblemInstance, i: int, p_i) -> np.ndarray:
    full = np.zeros(instance.n)
    blk = instance.block(i)
    full[blk] = p_i
    out = full.copy()
    T = instance.horizon
    for t in range(T):
        g = i * T + t
        if kernels.project_group(full, instance.group_start[g], instance.group_stop[g],
                                 instance.group_sign[g], instance.group_lo[g],
                                 instance.group_hi[g], out):
            raise ProjectionError(f"projection for prosumer {i}, period {t} did not converge")
    return out[blk]


def edge_prox(beta: float, w_self, w_peer, q_self, q_peer, loss) -> np.ndarray:
    """Intermediate price of one edge after the conjugate-indicator prox.

    ``(beta / 2) * (q_self + q_peer - loss) + (w_self + w_peer) / 2``; the
    expression is symmetric in the two sides.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    arrs = [np.asarray(x, dtype=float) for x in (w_self, w_peer, q_self, q_peer, loss)]
    shape = arrs[0].shape
    if any(x.shape != shape for x in arrs):
        raise ValueError("all edge vectors must have the same length")
    w_self, w_peer, q_self, q_peer, loss = arrs
    return 0.5 * beta * (q_self + q_peer - loss) + 0.5 * (w_self + w_peer)


def edge_prox_flat(instance: ProblemInstance, beta_c, p, w) -> np.ndarray:
    """:func:`edge_prox` for every directed half at once, in the shared layout."""
    mate = instance.mate
    return 0.5 * beta_c * (p + p[mate] - instance.loss) + 0.5 * (w + w[mate])


def kkt_residual(instance: ProblemInstance, p, w) -> tuple[float, float]:
    """Return ``(stationarity_norm, coupling_norm)`` of a primal-dual pair.

    Stationarity sums, over prosumers, the norm of the projected-gradient
    step ``p_i - P(p_i - (2 A_i p_i + b_i + w_i))``; coupling is the Euclidean
    norm of the reciprocity violations, one entry per edge and period.
    """
    p = np.ascontiguousarray(p, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    if p.shape != (instance.n,) or w.shape != (instance.n,):
        raise ValueError(f"p and w must have length {instance.n}")
    coup, stat = kernels.residuals(
        p, w, instance.a, instance.b, instance.loss, instance.mate, instance.owner, instance.m,
        instance.group_start, instance.group_stop, instance.group_sign, instance.group_lo,
        instance.group_hi, np.empty(instance.n))
    if np.isnan(stat):
        raise ProjectionError("projection failed while evaluating stationarity")
    return float(stat), float(coup)
