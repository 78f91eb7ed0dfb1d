"""Command-line front end.

Examples
--------
::

    dynap2p --scenario six_prosumer --mode validate
    dynap2p --scenario six_prosumer --mode syn --tol 1e-8 --out runs/syn
    dynap2p --scenario six_prosumer --mode asyn --delay-bound 10 --seeds 5 --out runs/asyn
    dynap2p --scenario six_prosumer --mode compare --seeds 20 --out runs/cmp

``--scenario`` takes a path or the name of a shipped scenario. Every mode
that produces data writes ``summary.json`` into ``--out``; ``syn`` and
``asyn`` also write per-run CSV traces, ``compare`` writes ``compare.csv``
and ``oracle`` writes ``oracle.json``.

Exit codes: 0 success, 1 usage or I/O error, 2 validation failure,
3 divergence.

Seeds: run ``r`` of a multi-seed sweep with base seed ``s`` uses
``SeedSequence([s, r]).generate_state(1)[0]``, so every run can be
replayed on its own with ``--seed <that value> --seeds 1 --raw-seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import BACKEND
from .analysis import AlreadyConverged, bound_suite, contraction_check, rate_fit
from .asyn import ActivationModel, DelayModel, SimWorld, TimingModel, run_asyn
from .oracle import InfeasibleInstance, OracleSolution, solve_reference
from .problem import InstanceError
from .scenario import load_instance, scenario_path
from .syn import DivergenceError, StepConfig, default_steps, run_syn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_DIVERGED = 3

COMPARE_COLUMNS = ("algorithm", "d", "seed", "ticks", "activations_per_agent", "messages",
                   "sim_time_ms", "coupling", "stationarity", "primal_error", "converged")


def run_seed(base: int, r: int) -> int:
    """Per-run seed of run ``r`` in a sweep with base seed ``base``."""
    return int(np.random.SeedSequence([base, r]).generate_state(1)[0])


def resolve_scenario(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.exists():
        return path
    shipped = scenario_path(name_or_path)
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name_or_path!r}")


def load_sim_config(path) -> dict:
    """Simulation config document; every key is optional.

    ``{"seed", "activation_rates", "delay": {"mode", "d"}, "theta",
    "timing": {"compute_ms", "latency_ms", "jitter"}, "stop": {"tol", "max_ticks"}}``
    """
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - {"seed", "activation_rates", "delay", "theta", "timing", "stop"}
    if unknown:
        raise ValueError(f"unknown simulation config keys: {sorted(unknown)}")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dynap2p", description="Peer-to-peer energy trading: solvers and simulator.")
    ap.add_argument("--scenario", required=True, help="scenario JSON path or shipped name")
    ap.add_argument("--mode", choices=("syn", "asyn", "compare", "oracle", "validate"),
                    default="syn")
    ap.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    ap.add_argument("--seeds", type=int, default=1, metavar="N", help="number of seeded runs")
    ap.add_argument("--raw-seed", action="store_true",
                    help="use --seed as the run seed itself (single run only)")
    ap.add_argument("--delay-bound", type=int, default=None, metavar="d")
    ap.add_argument("--delay-mode", choices=("uniform", "fixed", "sweep"), default=None)
    ap.add_argument("--d-values", default="0,10,20",
                    help="comma-separated delay bounds for compare mode")
    ap.add_argument("--theta", type=float, default=None,
                    help="relaxation (default 0.95 of the admissible bound)")
    ap.add_argument("--sigma", type=float, default=0.99, help="fraction of the step bound")
    ap.add_argument("--beta", type=float, default=None, help="dual step on every edge")
    ap.add_argument("--alpha", type=float, default=None,
                    help="primal step on every prosumer (overrides --sigma; unchecked)")
    ap.add_argument("--tol", type=float, default=None, help="residual tolerance (1e-6)")
    ap.add_argument("--max-iter", type=int, default=None,
                    help="iteration cap (syn, default 10000) or tick cap (asyn, default 1e6)")
    ap.add_argument("--config", default=None, help="simulation config JSON")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def _settings(args, cfg):
    stop = cfg.get("stop", {})
    delay = cfg.get("delay", {})
    timing = cfg.get("timing", {})
    return {
        "seed": args.seed if args.seed is not None else int(cfg.get("seed", 0)),
        "tol": args.tol if args.tol is not None else float(stop.get("tol", 1e-6)),
        "max_ticks": args.max_iter if args.max_iter is not None
        else int(stop.get("max_ticks", 1_000_000)),
        "max_iter": args.max_iter if args.max_iter is not None else 10_000,
        "d": args.delay_bound if args.delay_bound is not None else int(delay.get("d", 0)),
        "delay_mode": args.delay_mode or delay.get("mode", "uniform"),
        "theta": args.theta if args.theta is not None else cfg.get("theta"),
        "rates": cfg.get("activation_rates"),
        "timing": TimingModel(compute_ms=np.asarray(timing.get("compute_ms", 1.0), dtype=float),
                              latency_ms=np.asarray(timing.get("latency_ms", 0.0), dtype=float),
                              jitter=float(timing.get("jitter", 0.0))),
    }


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _fit(report):
    try:
        rate, r2 = rate_fit(report)
        return {"rate": rate, "r_squared": r2}
    except AlreadyConverged:
        return {"rate": None, "r_squared": None, "note": "converged within the window"}
    except ValueError as exc:
        return {"rate": None, "r_squared": None, "note": str(exc)}


def _violations(bounds: dict) -> list[str]:
    named = {"sync_alpha_ok": "primal step above the synchronous bound",
             "async_alpha_ok": "primal step above the asynchronous (nonexpansive) bound",
             "theta_ok": "relaxation above its admissible bound",
             "fejer_matrix_ok": "Fejer matrix 2T_d - T_s not positive definite",
             "nonexpansive_matrix_ok": "nonexpansiveness matrix not positive semidefinite"}
    return [msg for key, msg in named.items() if bounds.get(key) is False]


def cmd_validate(path) -> tuple[int, str]:
    """Schema and invariant check; returns ``(exit code, message)``."""
    try:
        inst = load_instance(path)
    except (InstanceError, ValueError) as exc:
        return EXIT_INVALID, f"FAIL {path}: {exc}"
    except OSError as exc:
        return EXIT_USAGE, f"FAIL {path}: {exc}"
    return EXIT_OK, (f"PASS {path}: {inst.m} prosumers, {len(inst.edges)} edges, "
                     f"{inst.horizon} periods, {inst.n} trade coordinates; connected, "
                     "roles partition every period, feasible sets nonempty, a > 0")


def _oracle(inst, scen: Path) -> OracleSolution:
    cached = scen.with_suffix(".oracle.json")
    if cached.exists():
        sol = OracleSolution.from_json(cached)
        if sol.p.shape == (inst.n,):
            return sol
    return solve_reference(inst)


def _run_syn(inst, steps, st, oracle, out: Path | None):
    timing = st["timing"]
    t0 = time.perf_counter()
    state, report = run_syn(inst, steps, tol=st["tol"], max_iter=st["max_iter"], oracle=oracle,
                            compute_ms=timing.compute_ms, latency_ms=timing.latency_ms)
    last = report.last
    res = {"algorithm": "syn", "iterations": state.k, "messages": int(last["messages"]),
           "sim_time_ms": last["sim_time_ms"], "coupling": last["coupling"],
           "stationarity": last["stationarity"],
           "converged": max(last["coupling"], last["stationarity"]) <= st["tol"],
           "primal_error": float(np.abs(state.p - oracle.p).max()),
           "fit": _fit(report), "contraction": contraction_check(report),
           "runtime_s": time.perf_counter() - t0}
    if out is not None:
        report.to_csv(out / "trace.csv")
    return state, report, res


def _make_world(inst, steps, st, d, seed):
    rates = st["rates"]
    act = ActivationModel.uniform(inst.m) if rates is None else ActivationModel(rates)
    return SimWorld.create(inst, steps, theta=st["theta"], activation=act,
                           delay=DelayModel(d, st["delay_mode"]), timing=st["timing"],
                           seed=seed, keep_log=False)


def _run_asyn(inst, steps, st, d, seed, oracle):
    world = _make_world(inst, steps, st, d, seed)
    t0 = time.perf_counter()
    state, report = run_asyn(world, tol=st["tol"], max_ticks=st["max_ticks"], oracle=oracle)
    last = report.last
    res = {"algorithm": "asyn", "d": d, "seed": seed, "theta": float(world.theta[0]),
           "ticks": world.k, "activations_per_agent": world.k / inst.m,
           "messages": world.messages, "sim_time_ms": world.sim_time_ms,
           "coupling": last["coupling"], "stationarity": last["stationarity"],
           "primal_error": float(np.abs(state.p - oracle.p).max()),
           "converged": report.meta["converged"], "fit": _fit(report),
           "runtime_s": time.perf_counter() - t0}
    return state, report, res, world


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scen = resolve_scenario(args.scenario)
        cfg = load_sim_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    code, msg = cmd_validate(scen)
    if args.mode == "validate" or code != EXIT_OK:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
        return code
    inst = load_instance(scen)
    st = _settings(args, cfg)
    if args.seeds < 1:
        print("error: --seeds must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    out = None
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

    try:
        oracle = _oracle(inst, scen)
    except InfeasibleInstance as exc:
        print(f"FAIL {scen}: infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.mode == "oracle":
        if out is not None:
            oracle.to_json(out / "oracle.json")
        print(json.dumps({"objective": oracle.objective, "stationarity": oracle.stationarity,
                          "coupling": oracle.coupling, "method": oracle.method}))
        return EXIT_OK

    summary = {"scenario": str(scen), "mode": args.mode, "backend": BACKEND,
               "settings": {k: v for k, v in st.items() if k != "timing"},
               "timing": {"compute_ms": st["timing"].compute_ms,
                          "latency_ms": st["timing"].latency_ms,
                          "jitter": st["timing"].jitter},
               "seed_rule": "run r uses SeedSequence([seed, r]).generate_state(1)[0]"}
    try:
        if args.mode == "syn":
            steps = _steps(inst, args, "sync")
            summary["bounds"] = bound_suite(inst, steps)
            try:
                state, _, res = _run_syn(inst, steps, st, oracle, out)
            except DivergenceError as exc:
                return _diverged(exc, _sync_only(summary["bounds"]), out, summary)
            summary["result"] = res
            summary["p"] = state.p
            if not res["contraction"]["contracts"]:
                return _diverged("iteration failed to contract", _sync_only(summary["bounds"]),
                                 out, summary)
            code = EXIT_OK
        else:
            steps = _steps(inst, args, "async")
            if args.mode == "asyn":
                seeds = [st["seed"]] if args.raw_seed else [run_seed(st["seed"], r)
                                                           for r in range(args.seeds)]
                d = st["d"]
                if st["delay_mode"] == "sweep":
                    d = max(d, inst.m - 1)
                runs = []
                for r, seed in enumerate(seeds):
                    world = _make_world(inst, steps, st, d, seed)
                    summary.setdefault("bounds", bound_suite(inst, steps, world.activation, d,
                                                             world.theta))
                    try:
                        _, report, res, _ = _run_asyn(inst, steps, st, d, seed, oracle)
                    except DivergenceError as exc:
                        return _diverged(exc, summary["bounds"], out, summary)
                    runs.append(res)
                    if not res["converged"] and _violations(summary["bounds"]):
                        summary["runs"] = runs
                        return _diverged("simulation failed to converge", summary["bounds"],
                                         out, summary)
                    if out is not None:
                        name = "trace.csv" if len(seeds) == 1 else f"trace_run{r}.csv"
                        report.to_csv(out / name)
                summary["runs"] = runs
                code = EXIT_OK
            else:
                summary.update(_compare(inst, steps, st, args, oracle, out))
                code = EXIT_OK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if out is not None:
        _write_json(out / "summary.json", summary)
    _print_brief(summary)
    return code


def _steps(inst, args, mode):
    steps = default_steps(inst, sigma=args.sigma, mode=mode, beta=args.beta)
    if args.alpha is not None:
        steps = StepConfig(alpha=np.full(inst.m, args.alpha), beta=steps.beta, mode=mode)
    return steps


def _compare(inst, steps_async, st, args, oracle, out):
    d_values = [int(x) for x in args.d_values.split(",") if x.strip()]
    steps_sync = _steps(inst, args, "sync")
    _, _, syn_res = _run_syn(inst, steps_sync, st, oracle, None)
    rows = [{"algorithm": "syn", "d": 0, "seed": "", "ticks": syn_res["iterations"] * inst.m,
             "activations_per_agent": syn_res["iterations"], "messages": syn_res["messages"],
             "sim_time_ms": syn_res["sim_time_ms"], "coupling": syn_res["coupling"],
             "stationarity": syn_res["stationarity"], "primal_error": syn_res["primal_error"],
             "converged": syn_res["converged"]}]
    per_d = {}
    seeds = [run_seed(st["seed"], r) for r in range(args.seeds)]
    for d in d_values:
        results = []
        for seed in seeds:
            _, _, res, _ = _run_asyn(inst, steps_async, st, d, seed, oracle)
            results.append(res)
            rows.append({k: res[k] for k in COMPARE_COLUMNS})
        ticks = [r["ticks"] if r["converged"] else math.inf for r in results]
        per_d[str(d)] = {
            "theta": results[0]["theta"],
            "median_ticks": float(np.median(ticks)),
            "median_activations_per_agent": float(np.median(ticks)) / inst.m,
            "median_messages": float(np.median([r["messages"] for r in results])),
            "median_sim_time_ms": float(np.median([r["sim_time_ms"] for r in results])),
            "all_converged": all(r["converged"] for r in results),
            "max_primal_error": max(r["primal_error"] for r in results),
        }
    med = [per_d[str(d)]["median_ticks"] for d in sorted(d_values)]
    if out is not None:
        with open(out / "compare.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating))
                                     else v)
                                 for k, v in row.items()})
    return {"syn": syn_res, "asyn": per_d,
            "median_ticks_nondecreasing_in_d": all(a <= b for a, b in zip(med, med[1:])),
            "gamma": "not computable (metric-subregularity constant unknown)"}


def _sync_only(bounds: dict) -> dict:
    return {k: bounds.get(k) for k in ("sync_alpha_ok", "fejer_matrix_ok")}


def _diverged(exc, bounds, out, summary):
    names = _violations(bounds) or ["no checked bound reported a violation"]
    print(f"DIVERGED: {exc}; violated: {'; '.join(names)}", file=sys.stderr)
    if out is not None:
        summary["diverged"] = {"error": str(exc), "violated": names}
        _write_json(out / "summary.json", summary)
    return EXIT_DIVERGED


def _print_brief(summary):
    mode = summary["mode"]
    if mode == "syn":
        r = summary["result"]
        print(f"syn: {r['iterations']} iterations, coupling {r['coupling']:.3g}, "
              f"stationarity {r['stationarity']:.3g}, converged={r['converged']}")
    elif mode == "asyn":
        for r in summary["runs"]:
            print(f"asyn d={r['d']} seed={r['seed']}: {r['ticks']} ticks, "
                  f"coupling {r['coupling']:.3g}, converged={r['converged']}")
    else:
        print(f"syn: {summary['syn']['iterations']} iterations")
        for d, r in summary["asyn"].items():
            print(f"asyn d={d}: median {r['median_ticks']:.0f} ticks, "
                  f"all converged={r['all_converged']}")
        print(f"median ticks nondecreasing in d: {summary['median_ticks_nondecreasing_in_d']}")


if __name__ == "__main__":
    sys.exit(main())
