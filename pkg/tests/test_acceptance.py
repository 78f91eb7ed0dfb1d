"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to keep the
lines next to the test names when output capturing is on; they are printed
regardless).
"""

import time

import numpy as np
import pytest

from dynap2p.analysis import bound_suite, contraction_check, rate_fit, ts_norm
from dynap2p.asyn import DelayModel, SimWorld, run_asyn
from dynap2p.cli import EXIT_DIVERGED, main
from dynap2p.operators import ProsumerFeasibleSet, kkt_residual, project_feasible
from dynap2p.oracle import grid_project, project_reference, solve_reference
from dynap2p.syn import SolverState, StepConfig, default_steps, run_syn, syn_step

D_VALUES = (0, 10, 20)
N_SEEDS = 20


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {n:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def _box_violation(inst, p):
    worst = 0.0
    for g in range(inst.group_start.size):
        x = p[inst.group_start[g]:inst.group_stop[g]]
        s = x.sum()
        worst = max(worst, float(np.max(-inst.group_sign[g] * x, initial=0.0)),
                    inst.group_lo[g] - s, s - inst.group_hi[g])
    return worst


def _reciprocity(inst, p):
    return float(np.abs(p + p[inst.mate] - inst.loss).max())


@pytest.fixture(scope="module")
def syn_long(six, six_oracle):
    """10,000 synchronous iterations with Fejer slack recorded at each one."""
    steps = default_steps(six)
    w = steps.weights(six)
    star = six_oracle.U
    state = SolverState(0, np.zeros(six.n), np.zeros(six.n))
    dist = [ts_norm(w, state.U - star)]
    for _ in range(10_000):
        state = syn_step(six, steps, state)
        dist.append(ts_norm(w, state.U - star))
    return state, np.array(dist)


@pytest.fixture(scope="module")
def asyn_runs(six, six_oracle):
    steps = default_steps(six, mode="async")
    runs = {}
    t0 = time.perf_counter()
    for d in D_VALUES:
        for seed in range(N_SEEDS):
            world = SimWorld.create(six, steps, delay=DelayModel(d), seed=seed, keep_log=False)
            state, report = run_asyn(world, tol=1e-7, max_ticks=1_000_000)
            runs[d, seed] = (state, report)
    return runs, time.perf_counter() - t0


def test_criterion_01_analytic_optimum(two, capsys):
    steps = default_steps(two)
    run_syn(two, steps, tol=1e-8, max_iter=1)  # compile the kernels outside the timing
    t0 = time.perf_counter()
    state, _ = run_syn(two, steps, tol=1e-12, max_iter=5000)
    elapsed = time.perf_counter() - t0
    err = float(np.abs(state.p - [1.0, -1.0]).max())
    ok = err <= 1e-8 and state.k <= 5000 and elapsed < 1.0
    _verdict(capsys, 1, ok, f"|p - (1,-1)|inf = {err:.2e} after {state.k} iterations "
                            f"in {elapsed:.3f} s")


def test_criterion_02_fejer(syn_long, capsys):
    _, dist = syn_long
    slack = dist[1:] ** 2 - dist[:-1] ** 2
    worst = float(slack.max())
    _verdict(capsys, 2, worst <= 1e-12 and slack.size == 10_000,
             f"max Fejer slack {worst:.2e} over {slack.size} iterations")


def test_criterion_03_linear_rate(syn_long, capsys):
    _, dist = syn_long
    # tail window: last half of the iterations still above the rounding floor
    stop = int(np.flatnonzero(dist > 1e-10)[-1]) + 1
    rate, r2 = rate_fit(dist[:stop], window=slice(stop // 2, stop))
    _verdict(capsys, 3, rate < 1 and r2 >= 0.95,
             f"rate {rate:.4f}, R^2 {r2:.5f} over iterations {stop // 2}..{stop - 1}")


def test_criterion_04_nonexpansive(six, capsys):
    steps = default_steps(six, mode="async")
    w = steps.weights(six)
    rng = np.random.default_rng(2024)
    worst, ratio = -np.inf, 0.0
    for k in range(100):
        scale = rng.uniform(0.1, 50)
        U = SolverState(0, rng.normal(scale=scale, size=six.n),
                        rng.normal(scale=scale, size=six.n))
        # half of the pairs are close together, where the projections tend to agree
        gap = scale if k % 2 else 1e-2 * scale
        Z = SolverState(0, U.p + rng.normal(scale=gap, size=six.n),
                        U.w + rng.normal(scale=gap, size=six.n))
        TU, TZ = syn_step(six, steps, U), syn_step(six, steps, Z)
        after, before = ts_norm(w, TU.U - TZ.U), ts_norm(w, U.U - Z.U)
        worst = max(worst, after - before)
        ratio = max(ratio, after / before)
    _verdict(capsys, 4, worst <= 1e-10,
             f"max ||TU - TZ|| - ||U - Z|| = {worst:.2e}, max ratio {ratio:.4f} "
             "over 100 pairs")


def test_criterion_05_sweep_equivalence(six, capsys):
    steps = default_steps(six)
    rng = np.random.default_rng(5)
    p0, w0 = rng.normal(scale=3, size=six.n), rng.normal(size=six.n)
    world = SimWorld.create(six, steps, delay=DelayModel(six.m - 1, "sweep"), p0=p0, w0=w0)
    state = SolverState(0, p0, w0)
    worst = 0.0
    for _ in range(10):
        world.advance(six.m)
        state = syn_step(six, steps, state)
        worst = max(worst, np.abs(world.p - state.p).max(), np.abs(world.w - state.w).max())
    _verdict(capsys, 5, worst <= 1e-12, f"max deviation over 10 sweeps {worst:.2e}")


def test_criterion_06_async_convergence(six, six_oracle, asyn_runs, capsys):
    runs, elapsed = asyn_runs
    coupling = max(r.last["coupling"] for _, r in runs.values())
    primal = max(float(np.abs(s.p - six_oracle.p).max()) for s, _ in runs.values())
    all_conv = all(r.meta["converged"] for _, r in runs.values())
    medians = [float(np.median([runs[d, s][1].meta["ticks"] for s in range(N_SEEDS)]))
               for d in D_VALUES]
    ordered = all(a <= b for a, b in zip(medians, medians[1:]))
    ok = all_conv and coupling <= 1e-5 and primal <= 1e-4 and ordered and elapsed < 120
    _verdict(capsys, 6, ok,
             f"{len(runs)} runs, max coupling {coupling:.2e}, max primal error {primal:.2e}, "
             f"median ticks {dict(zip(D_VALUES, medians))}, {elapsed:.1f} s")


def test_criterion_07_price_consistency(six, asyn_runs, capsys):
    runs, _ = asyn_runs
    syn_state, _ = run_syn(six, default_steps(six), tol=1e-10, max_iter=10_000)
    worst = max(float(np.abs(runs[10, s][0].w - syn_state.w).max()) for s in range(N_SEEDS))
    _verdict(capsys, 7, worst <= 1e-4,
             f"max |w_syn - w_asyn(d=10)| = {worst:.2e} over {N_SEEDS} seeds")


def test_criterion_08_reciprocity_feasibility(six, asyn_runs, capsys):
    runs, _ = asyn_runs
    syn_state, _ = run_syn(six, default_steps(six), tol=1e-8)
    states = [syn_state] + [s for s, _ in runs.values()]
    recip = max(_reciprocity(six, s.p) for s in states)
    box = max(_box_violation(six, s.p) for s in states)
    _verdict(capsys, 8, recip <= 1e-5 and box <= 1e-9,
             f"max reciprocity gap {recip:.2e}, max box/sign violation {box:.2e} "
             f"over {len(states)} terminal states")


def test_criterion_09_projection_oracle(capsys):
    rng = np.random.default_rng(9)

    def case(dim):
        seller = bool(rng.random() < 0.5)
        a, b = np.sort(rng.uniform(0, 8, 2))
        lo, hi = (a, b) if seller else (-b, -a)
        return seller, lo, hi, rng.normal(scale=4.0, size=dim)

    def proj(seller, lo, hi, v):
        fs = ProsumerFeasibleSet(np.array([[seller]]), np.array([[lo]]), np.array([[hi]]))
        return project_feasible(fs, 0, 0, v)

    qp = 0.0
    for _ in range(1000):
        seller, lo, hi, v = case(int(rng.integers(1, 6)))
        qp = max(qp, np.abs(proj(seller, lo, hi, v) - project_reference(seller, lo, hi, v)).max())
    grid = 0.0
    for k in range(60):
        seller, lo, hi, v = case(1 + k % 3)
        grid = max(grid, np.abs(proj(seller, lo, hi, v) - grid_project(seller, lo, hi, v)).max())
    _verdict(capsys, 9, qp <= 1e-8 and grid <= 2e-3,
             f"QP oracle max error {qp:.2e} (1000 cases), grid max error {grid:.2e} (60 cases)")


def test_criterion_10_negative_bound(two, tmp_path, capsys):
    base = default_steps(two, sigma=1.0)
    bad = StepConfig(alpha=4 * base.alpha, beta=base.beta)
    _, report = run_syn(two, bad, tol=1e-8, max_iter=5000, oracle=solve_reference(two))
    check = contraction_check(report)
    bounds = bound_suite(two, bad)
    code = main(["--scenario", "two_prosumer", "--mode", "syn",
                 "--alpha", repr(float(bad.alpha[0])), "--out", str(tmp_path)])
    ok = (not check["contracts"] and not bounds["sync_alpha_ok"]
          and not bounds["all_sync_ok"] and code == EXIT_DIVERGED)
    _verdict(capsys, 10, ok,
             f"4x bound: contracts={check['contracts']}, max Fejer slack "
             f"{check['max_fejer_slack']:.2e}, bound check ok={bounds['all_sync_ok']}, "
             f"CLI exit {code}")
