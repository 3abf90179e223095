"""Time the numba kernels against the interpreted fallback.

Each backend runs in its own interpreter because ``BBMLD_DISABLE_JIT`` is
read at import time. Every workload is run once untimed (JIT compilation,
cache load) and then timed; a checksum of the outputs confirms the two
paths computed the same thing.

    python benchmarks/bench_kernels.py [--scale 5.0] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from bbmld import backend, fkpp, rare
from bbmld.params import ModelParams
from bbmld.sim import sample_observables

scale = float(sys.argv[1])
n = lambda k: max(1, int(k * scale))
times = np.arange(2.0, 7.0)


def dfs():
    return rare.hit_matrix(ModelParams("bbm"), 1.8, times, n(400), 1, engine="dfs")[0]


def event_lbbm():
    return sample_observables(ModelParams("lbbm", L=2.0), times, n(40), 2)[0]


def event_nbbm():
    return sample_observables(ModelParams("nbbm", N=64), times, n(40), 3)[0]


def cbrw():
    return sample_observables(ModelParams("cbrw", mu=0.1), times, n(40), 4)[0]


def fkpp_steps():
    prof = fkpp.step_profile(-20.0, 40.0, 0.05)
    return fkpp.integrate_fkpp(prof, 0.5 * scale, 0.001).values


out = {"backend": backend(), "results": {}}
for name, fn in [("bbm_dfs", dfs), ("lbbm_event", event_lbbm), ("nbbm_event", event_nbbm),
                 ("cbrw_gillespie", cbrw), ("fkpp_stepper", fkpp_steps)]:
    fn()
    t0 = time.perf_counter()
    res = fn()
    dt = time.perf_counter() - t0
    digest = hashlib.sha256(np.ascontiguousarray(res).tobytes()).hexdigest()[:16]
    out["results"][name] = {"seconds": dt, "digest": digest}
print(json.dumps(out))
"""


def run_backend(disable: bool, scale: float) -> dict:
    env = dict(os.environ, BBMLD_DISABLE_JIT="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(scale)], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--scale", type=float, default=5.0, help="multiplies every workload size")
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args(argv)
    jit = run_backend(False, args.scale)
    py = run_backend(True, args.scale)
    print(f"{'workload':<16}{jit['backend'] + ' [s]':>12}{py['backend'] + ' [s]':>12}{'speedup':>10}  same")
    mismatch = 0
    for name, a in jit["results"].items():
        b = py["results"][name]
        same = a["digest"] == b["digest"]
        mismatch += not same
        print(f"{name:<16}{a['seconds']:>12.4f}{b['seconds']:>12.4f}{b['seconds'] / a['seconds']:>10.1f}  "
              f"{'yes' if same else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": jit, "fallback": py, "scale": args.scale}, fh, indent=2)
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())
