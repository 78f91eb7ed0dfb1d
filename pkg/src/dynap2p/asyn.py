"""Discrete-event simulation of the asynchronous relaxed iteration.

One agent fires per tick of a virtual global clock. The activated agent reads
its own variables fresh and its traders' variables from a local buffer that
is filled by per-link FIFO messages whose latency is drawn from a delay model.
Every read is therefore at most ``d`` ticks stale.

The heavy loop lives in :func:`dynap2p.kernels.asyn_run_chunk`; this module
sets up the arrays, pre-draws the random numbers per chunk and turns the
kernel's records into a :class:`~dynap2p.analysis.ConvergenceReport`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .analysis import ConvergenceReport
from .operators import ProjectionError, edge_prox_flat, project_all
from .problem import ProblemInstance
from .syn import DivergenceError, SolverState, StepConfig

__all__ = ["ActivationModel", "DelayModel", "TimingModel", "SimWorld", "StaleReadError",
           "theta_bound", "asyn_step", "run_asyn", "sweep_schedule", "DELAY_MODES"]

DELAY_MODES = ("fixed", "uniform", "sweep")


class StaleReadError(AssertionError):
    """A read referenced state older than the delay bound."""


@dataclass(frozen=True)
class ActivationModel:
    """Independent activations with probabilities proportional to ``rates``."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if rates.size == 0 or np.any(~(rates > 0)) or not np.all(np.isfinite(rates)):
            raise ValueError("activation rates must be positive and finite")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def uniform(cls, m: int) -> "ActivationModel":
        return cls(np.ones(m))

    @property
    def m(self) -> int:
        return self.rates.size

    @property
    def probs(self) -> np.ndarray:
        return self.rates / self.rates.sum()

    @property
    def kappa(self) -> float:
        """``P_max / P_min``."""
        P = self.probs
        return float(P.max() / P.min())

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # inverse-CDF on uniforms: the stream is independent of the chunking
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)


@dataclass(frozen=True)
class DelayModel:
    """Message latency in ticks.

    ``fixed`` delays every message by ``d`` ticks, ``uniform`` draws each
    latency from ``{0, ..., d}``, and ``sweep`` is the deterministic
    round-robin pattern of :func:`sweep_schedule`.
    """

    d: int = 0
    mode: str = "uniform"

    def __post_init__(self):
        if self.mode not in DELAY_MODES:
            raise ValueError(f"delay mode must be one of {DELAY_MODES}")
        if int(self.d) != self.d or self.d < 0:
            raise ValueError("delay bound d must be a non-negative integer")
        object.__setattr__(self, "d", int(self.d))

    def draw(self, rng: np.random.Generator, n: int, width: int) -> np.ndarray:
        if self.mode == "fixed" or self.d == 0:
            return np.full((n, width), self.d, dtype=np.int64)
        return np.floor(rng.random((n, width)) * (self.d + 1)).astype(np.int64)


@dataclass(frozen=True)
class TimingModel:
    """Simulated wall time.

    Each activation of agent ``i`` takes ``compute_ms[i]`` scaled by a factor
    drawn uniformly from ``[1 - jitter, 1 + jitter]``. Agents compute in
    parallel, so one asynchronous tick advances the clock by that duration
    divided by ``m``. A synchronous iteration waits for the slowest agent and
    the slowest message.
    """

    compute_ms: float | np.ndarray = 1.0
    latency_ms: float | np.ndarray = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")
        if np.any(np.asarray(self.compute_ms) < 0) or np.any(np.asarray(self.latency_ms) < 0):
            raise ValueError("durations must be non-negative")

    def tick_ms(self, rng: np.random.Generator, agents: np.ndarray, m: int) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.compute_ms, dtype=float), (m,))[agents]
        if self.jitter > 0:
            base = base * (1.0 + self.jitter * (2.0 * rng.random(agents.size) - 1.0))
        return base / m

    def sync_iteration_ms(self) -> float:
        return float(np.max(self.compute_ms)) + float(np.max(self.latency_ms))


def theta_bound(steps: StepConfig, activation: ActivationModel, d: int,
                instance: ProblemInstance | None = None) -> float:
    """Largest admissible relaxation ``1 / (2 d sqrt(kS kP) + kS kP)``.

    ``kS`` is the condition number of the step-size metric and ``kP`` that of
    the activation probabilities. Without ``instance`` the metric is taken
    over the per-prosumer and per-edge step sizes directly (the same extreme
    values, since every prosumer and edge owns at least one coordinate).
    """
    if instance is not None:
        kappa_s = steps.weights(instance).condition_number()
    else:
        diag = np.concatenate([1.0 / steps.beta, 1.0 / steps.alpha])
        kappa_s = float(diag.max() / diag.min())
    kp = activation.kappa * kappa_s
    return 1.0 / (2.0 * d * math.sqrt(kp) + kp)


def sweep_schedule(m: int, n_sweeps: int = 1):
    """Round-robin activation order with the matching per-sender latencies.

    Agent ``i`` fires at position ``i`` of every sweep and its messages take
    ``m - 1 - i`` ticks, so all of them land at the first tick of the next
    sweep: every read inside a sweep sees the state at the sweep's start.

    Returns ``(agents, latency)`` as integer arrays of length ``m * n_sweeps``.
    """
    if m < 1:
        raise ValueError("need at least one agent")
    agents = np.tile(np.arange(m, dtype=np.int64), n_sweeps)
    return agents, (m - 1 - agents).astype(np.int64)


@dataclass
class SimWorld:
    """All mutable simulation state: iterates, buffers, in-flight messages, clock.

    Build one with :meth:`create`. The virtual clock ``k`` counts activations;
    agents never see it.
    """

    instance: ProblemInstance
    steps: StepConfig
    theta: np.ndarray
    activation: ActivationModel
    delay: DelayModel
    timing: TimingModel
    seed: int | None
    k: int
    p: np.ndarray
    w: np.ndarray
    messages: int = 0
    sim_time_ms: float = 0.0
    keep_log: bool = True
    log_agent: list = field(default_factory=list, repr=False)
    log_stale: list = field(default_factory=list, repr=False)
    _arr: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, instance: ProblemInstance, steps: StepConfig, *, theta=None,
               activation: ActivationModel | None = None, delay: DelayModel | None = None,
               timing: TimingModel | None = None, seed: int | None = 0,
               p0=None, w0=None, keep_log: bool = True) -> "SimWorld":
        """Initialize buffers with the starting point and empty message queues.

        ``theta`` defaults to 0.95 of :func:`theta_bound` (1 in sweep mode).
        """
        m = instance.m
        activation = ActivationModel.uniform(m) if activation is None else activation
        delay = DelayModel() if delay is None else delay
        timing = TimingModel() if timing is None else timing
        if activation.m != m:
            raise ValueError(f"activation model has {activation.m} rates for {m} agents")
        if delay.mode == "sweep" and delay.d < m - 1:
            raise ValueError(f"sweep schedule needs d >= m - 1 = {m - 1}, got {delay.d}")
        if theta is None:
            theta = 1.0 if delay.mode == "sweep" else 0.95 * theta_bound(
                steps, activation, delay.d, instance)
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (m,)).copy()
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise ValueError("relaxation must be non-negative")
        p = np.zeros(instance.n) if p0 is None else np.array(p0, dtype=float)
        w = np.zeros(instance.n) if w0 is None else np.array(w0, dtype=float)
        world = cls(instance, steps, theta, activation, delay, timing, seed, 0, p, w,
                    keep_log=keep_log)
        world._setup()
        return world

    def _setup(self):
        inst = self.instance
        m, T = inst.m, inst.horizon
        nbrs = inst.network.neighbors
        deg = np.array([len(nb) for nb in nbrs], dtype=np.int64)
        loff = np.concatenate([[0], np.cumsum(deg)])
        H = int(loff[-1])
        maxdeg = int(deg.max())
        out_link = np.full((m, maxdeg), -1, dtype=np.int64)
        in_link = np.full((m, maxdeg), -1, dtype=np.int64)
        link_src = np.empty((H, T), dtype=np.int64)
        link_dst = np.empty((H, T), dtype=np.int64)
        for i in range(m):
            for s, j in enumerate(nbrs[i]):
                h = loff[i] + s
                out_link[i, s] = h
                in_link[i, s] = loff[j] + inst.network.slot(j, i)
                for t in range(T):
                    link_src[h, t] = inst.coord(i, j, t)
                    link_dst[h, t] = inst.coord(j, i, t)
        cap = self.delay.d + 2
        alpha_c, beta_c = self.steps.per_coord(inst)
        self._arr = dict(
            offset=np.ascontiguousarray(inst.offset, dtype=np.int64), deg=deg,
            in_link=in_link, out_link=out_link, link_src=link_src, link_dst=link_dst,
            a=np.ascontiguousarray(inst.a), b=np.ascontiguousarray(inst.b),
            loss=np.ascontiguousarray(inst.loss),
            mate=np.ascontiguousarray(inst.mate, dtype=np.int64),
            owner=np.ascontiguousarray(inst.owner, dtype=np.int64),
            beta_c=np.ascontiguousarray(beta_c), alpha_i=np.ascontiguousarray(self.steps.alpha),
            g_start=np.ascontiguousarray(inst.group_start, dtype=np.int64),
            g_stop=np.ascontiguousarray(inst.group_stop, dtype=np.int64),
            g_sign=np.ascontiguousarray(inst.group_sign, dtype=float),
            g_lo=np.ascontiguousarray(inst.group_lo, dtype=float),
            g_hi=np.ascontiguousarray(inst.group_hi, dtype=float),
            buf_p=self.p[inst.mate].copy(), buf_w=self.w[inst.mate].copy(),
            buf_origin=np.zeros(H, dtype=np.int64),
            q_origin=np.zeros((H, cap), dtype=np.int64),
            q_deliver=np.zeros((H, cap), dtype=np.int64),
            q_p=np.zeros((H, cap, T)), q_w=np.zeros((H, cap, T)),
            q_head=np.zeros(H, dtype=np.int64), q_count=np.zeros(H, dtype=np.int64),
            last_deliver=np.zeros(H, dtype=np.int64),
            scratch=np.empty(inst.n), totals=np.zeros(2),
        )
        ss = np.random.SeedSequence(self.seed)
        act_ss, delay_ss, time_ss = ss.spawn(3)
        self._rng_act = np.random.default_rng(act_ss)
        self._rng_delay = np.random.default_rng(delay_ss)
        self._rng_time = np.random.default_rng(time_ss)

    # -- views ---------------------------------------------------------------

    @property
    def state(self) -> SolverState:
        return SolverState(self.k, self.p.copy(), self.w.copy())

    @property
    def U(self) -> np.ndarray:
        return np.concatenate([self.w, self.p])

    @property
    def in_flight(self) -> int:
        return int(self._arr["q_count"].sum())

    def buffer_views(self) -> tuple[np.ndarray, np.ndarray]:
        """Latest received trader values in the shared layout (copies)."""
        return self._arr["buf_p"].copy(), self._arr["buf_w"].copy()

    def event_log(self) -> tuple[np.ndarray, np.ndarray]:
        """``(activated agent, worst read staleness)`` per tick so far."""
        if not self.log_agent:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(self.log_agent), np.concatenate(self.log_stale)

    # -- randomness ----------------------------------------------------------

    def _draw(self, n: int):
        m = self.instance.m
        width = self._arr["in_link"].shape[1]
        if self.delay.mode == "sweep":
            pos = (self.k + np.arange(n)) % m
            act = pos.astype(np.int64)
            lat = np.repeat((m - 1 - pos)[:, None], width, axis=1).astype(np.int64)
        else:
            act = self.activation.draw(self._rng_act, n)
            lat = self.delay.draw(self._rng_delay, n, width)
        dt = self.timing.tick_ms(self._rng_time, act, m)
        return act, np.ascontiguousarray(lat), np.ascontiguousarray(dt)

    # -- advancing -----------------------------------------------------------

    def advance(self, n_ticks: int, *, check_every: int = 1, tol: float = 0.0,
                stop_on_tol: bool = False, star=None, weights=None):
        """Run up to ``n_ticks`` activations through the kernel.

        Returns ``(status, ticks_done, records)`` where ``records`` is a dict
        of arrays with one entry per residual check.
        """
        A = self._arr
        act, lat, dt = self._draw(n_ticks)
        rec_cap = n_ticks // max(check_every, 1) + 2
        rec = {key: np.zeros(rec_cap) for key in ("k", "dist", "coup", "stat", "msgs", "time")}
        rec_k = np.zeros(rec_cap, dtype=np.int64)
        rec_n = np.zeros(1, dtype=np.int64)
        log_agent = np.zeros(n_ticks, dtype=np.int64)
        log_stale = np.zeros(n_ticks, dtype=np.int64)
        have_star = star is not None
        n = self.instance.n
        if have_star:
            p_star = np.ascontiguousarray(star[n:])
            w_star = np.ascontiguousarray(star[:n])
            wt_p = np.ascontiguousarray(weights.primal)
            wt_w = np.ascontiguousarray(weights.dual)
        else:
            p_star = w_star = wt_p = wt_w = np.zeros(n)
        A["totals"][0] = self.messages
        A["totals"][1] = self.sim_time_ms
        status, done = kernels.asyn_run_chunk(
            self.k, self.delay.d, n_ticks,
            A["offset"], A["deg"], A["in_link"], A["out_link"], A["link_src"], A["link_dst"],
            A["a"], A["b"], A["loss"], A["mate"], A["owner"], A["beta_c"], A["alpha_i"],
            self.theta,
            A["g_start"], A["g_stop"], A["g_sign"], A["g_lo"], A["g_hi"], self.instance.horizon,
            self.p, self.w, A["buf_p"], A["buf_w"], A["buf_origin"],
            A["q_origin"], A["q_deliver"], A["q_p"], A["q_w"], A["q_head"], A["q_count"],
            A["last_deliver"],
            act, lat, dt,
            max(int(check_every), 1), float(tol), bool(stop_on_tol),
            have_star, p_star, w_star, wt_p, wt_w,
            rec_k, rec["dist"], rec["coup"], rec["stat"], rec["msgs"], rec["time"], rec_n,
            A["totals"], log_agent, log_stale, A["scratch"])
        status, done = int(status), int(done)
        logged = done if status in (kernels.RUNNING, kernels.CONVERGED, kernels.DIVERGED) \
            else done + 1
        if self.keep_log:
            self.log_agent.append(log_agent[:logged])
            self.log_stale.append(log_stale[:logged])
        self.k += done
        self.messages = int(A["totals"][0])
        self.sim_time_ms = float(A["totals"][1])
        r = int(rec_n[0])
        records = {"k": rec_k[:r], "dist_ts": rec["dist"][:r], "coupling": rec["coup"][:r],
                   "stationarity": rec["stat"][:r], "messages": rec["msgs"][:r],
                   "sim_time_ms": rec["time"][:r]}
        if status == kernels.STALE_READ:
            raise StaleReadError(f"read older than d={self.delay.d} at tick {self.k}")
        if status == kernels.PROJECTION_FAILED:
            raise ProjectionError(f"projection failed at tick {self.k}")
        if status == kernels.DIVERGED:
            raise DivergenceError(
                f"non-finite iterate at tick {self.k}; the relaxation or primal step "
                "exceeds its bound")
        return status, done, records


def asyn_step(world: SimWorld, check: bool = True) -> SimWorld:
    """Advance ``world`` in place by exactly one activation and return it.

    With ``check`` the hold-state property is asserted: only the activated
    agent's block of ``p`` and ``w`` may change.
    """
    before_p, before_w = world.p.copy(), world.w.copy()
    world.advance(1)
    if check:
        i = int(world.log_agent[-1][-1]) if world.keep_log else None
        if i is not None:
            blk = world.instance.block(i)
            mask = np.ones(world.instance.n, dtype=bool)
            mask[blk] = False
            if not (np.array_equal(world.p[mask], before_p[mask])
                    and np.array_equal(world.w[mask], before_w[mask])):
                raise AssertionError(f"inactive agents changed state at tick {world.k}")
    return world


def reference_tick(instance: ProblemInstance, steps: StepConfig, theta: float, i: int,
                   p, w, peer_p, peer_w):
    """Pure-NumPy version of one activation of agent ``i`` (for testing).

    ``peer_p``/``peer_w`` hold the (possibly stale) trader values in the
    shared layout; only agent ``i``'s block of the result differs from the
    input.
    """
    alpha_c, beta_c = steps.per_coord(instance)
    blk = instance.block(i)
    # the edge prox of the own half uses the own fresh value and the peer's buffered one
    p_mix = np.array(p, dtype=float)
    w_mix = np.array(w, dtype=float)
    p_mix[instance.mate[blk]] = peer_p[blk]
    w_mix[instance.mate[blk]] = peer_w[blk]
    w_bar = edge_prox_flat(instance, beta_c, p_mix, w_mix)
    v = p - alpha_c * (2.0 * instance.a * p + instance.b + w_bar)
    p_bar = project_all(instance, v)
    p_new, w_new = np.array(p, dtype=float), np.array(w, dtype=float)
    dp = p_bar[blk] - p[blk]
    w_new[blk] = w[blk] + theta * (w_bar[blk] - w[blk]) + theta * beta_c[blk] * dp
    p_new[blk] = p[blk] + theta * dp
    return p_new, w_new


def run_asyn(world: SimWorld, tol: float = 1e-6, max_ticks: int = 1_000_000, oracle=None,
             check_every: int | None = None, chunk: int = 65_536):
    """Simulate until ``max(coupling, stationarity) <= tol`` or ``max_ticks``.

    Residuals are evaluated on the global state (an observer-only
    computation) every ``check_every`` ticks, ``m`` by default, and once more
    at the end. Returns ``(state, report)``; ``report.meta["converged"]``
    tells whether the tolerance was met.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_ticks < 0:
        raise ValueError("max_ticks must be non-negative")
    inst = world.instance
    check_every = inst.m if check_every is None else int(check_every)
    if check_every < 1:
        raise ValueError("check_every must be at least 1")
    weights = world.steps.weights(inst)
    star = None if oracle is None else oracle.U
    report = ConvergenceReport()
    report.meta.update(seed=world.seed, d=world.delay.d, mode=world.delay.mode,
                       theta=world.theta.tolist(), check_every=check_every)

    def snapshot():
        coup, stat = kernels.residuals(world.p, world.w, inst.a, inst.b, inst.loss, inst.mate,
                                       inst.owner, inst.m, inst.group_start, inst.group_stop,
                                       inst.group_sign.astype(float), inst.group_lo,
                                       inst.group_hi, np.empty(inst.n))
        dist = math.nan
        if star is not None:
            dist = float(np.sqrt(np.dot(weights.diag * (world.U - star), world.U - star)))
        return dist, coup, stat

    dist0, coup, stat = snapshot()
    report.append(k=world.k, dist_ts=dist0, coupling=coup, stationarity=stat,
                  messages=world.messages, sim_time_ms=world.sim_time_ms)
    converged = max(coup, stat) <= tol
    prev = dist0
    while not converged and world.k < max_ticks:
        n = min(chunk, max_ticks - world.k)
        # keep checks aligned to multiples of check_every across chunks
        status, _, rec = world.advance(n, check_every=check_every, tol=tol, stop_on_tol=True,
                                       star=star, weights=weights)
        if rec["k"].size:
            d2 = rec["dist_ts"] ** 2
            slack = np.diff(np.concatenate([[prev * prev], d2]))
            prev = rec["dist_ts"][-1]
            report.extend(k=rec["k"], dist_ts=rec["dist_ts"], coupling=rec["coupling"],
                          stationarity=rec["stationarity"], fejer_slack=slack,
                          messages=rec["messages"], sim_time_ms=rec["sim_time_ms"])
        converged = status == kernels.CONVERGED
    if report.columns["k"][-1] != world.k:
        # the budget ran out between two checks
        dist, coup, stat = snapshot()
        report.append(k=world.k, dist_ts=dist, coupling=coup, stationarity=stat,
                      fejer_slack=dist * dist - prev * prev, messages=world.messages,
                      sim_time_ms=world.sim_time_ms)
        converged = max(coup, stat) <= tol
    report.meta["converged"] = bool(converged)
    report.meta["ticks"] = world.k
    return world.state, report
