"""Compare the compiled kernels with the pure-NumPy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``DYNAP2P_NUMBA``::

    python benchmarks/bench_kernels.py --ticks 20000 --iters 2000

The first call of every workload is a warm-up (it triggers compilation or
loads the on-disk cache) and is excluded from the timings.
"""

import argparse
import json
import os
import subprocess
import sys

_WORKLOAD = """
import json, sys, time
import numpy as np
from dynap2p import _accel
from dynap2p.asyn import DelayModel, SimWorld
from dynap2p.operators import project_all
from dynap2p.scenario import load_instance, scenario_path
from dynap2p.syn import default_steps, run_syn

ticks, iters, repeat = (int(x) for x in sys.argv[1:4])
six = load_instance(scenario_path("six_prosumer"))
v = np.random.default_rng(0).normal(scale=5, size=six.n)


def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def sim():
    w = SimWorld.create(six, default_steps(six, mode="async"), delay=DelayModel(10), seed=1,
                        keep_log=False)
    w.advance(ticks, check_every=six.m)


out = {
    "backend": _accel.BACKEND,
    "project_all_1000x": best(lambda: [project_all(six, v) for _ in range(1000)]),
    "syn_iterations": best(lambda: run_syn(six, default_steps(six), tol=1e-300,
                                           max_iter=iters)),
    "asyn_ticks": best(sim),
}
print(json.dumps(out))
"""


def run(flag, args):
    env = dict(os.environ, DYNAP2P_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", _WORKLOAD, str(args.ticks), str(args.iters),
                           str(args.repeat)], env=env, capture_output=True, text=True,
                          check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ticks", type=int, default=20_000, help="asynchronous ticks")
    ap.add_argument("--iters", type=int, default=2_000, help="synchronous iterations")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast, slow = run("1", args), run("0", args)
    labels = {"project_all_1000x": "1000 projections of the full state",
              "syn_iterations": f"{args.iters} synchronous iterations",
              "asyn_ticks": f"{args.ticks} asynchronous ticks (d=10)"}
    print(f"{'workload':42s} {fast['backend']:>10s} {slow['backend']:>10s} {'speed-up':>9s}")
    for key, label in labels.items():
        print(f"{label:42s} {fast[key]:9.4f}s {slow[key]:9.4f}s {slow[key] / fast[key]:8.1f}x")


if __name__ == "__main__":
    main()
