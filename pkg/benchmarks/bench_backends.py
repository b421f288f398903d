"""Time the jitted kernels against the pure-numpy fallback.

Each backend runs in its own interpreter (the backend is fixed at import time
by IMPULSELAB_DISABLE_NUMBA). Simulation workloads must agree bit for bit;
kernel sums may differ by summation order, so they are compared to 1e-12.

    python3 benchmarks/bench_backends.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile

import numpy as np

WORKER = r"""
import json, sys, time
import numpy as np
import impulselab as il
from impulselab import catalog, control, estimation

repeat = int(sys.argv[1])
dump = sys.argv[2]
prob = catalog.get_problem("ou")
m, r = prob.model, prob.reward


def sim():
    return il.simulate_path(m, 0.0, 200.0, 1e-3, 1).values


path = il.simulate_path(m, 0.0, 200.0, 1e-3, 1)
xs = np.linspace(-2, 2, 2001)


def kde():
    return estimation.KernelDensityEstimate(path, "epanechnikov", 0.05)(xs)


def passage():
    return il.first_passage_times(m, 0.0, [0.5, 1.0], 64, 1e-3, seed=2, t_cap=200.0)


def threshold():
    run = control.run_threshold_strategy(m, r, control.ThresholdStrategy(1.0), 50.0, 1e-3, 3)
    return np.array([iv.t for iv in run.interventions])


out = {"backend": il.backend_name()}
arrays = {}
for name, fn in (("simulate_path_2e5", sim), ("kde_2001pts", kde),
                 ("first_passage_64reps", passage), ("threshold_run_T50", threshold)):
    fn()  # warm-up (compilation for the jitted backend)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t)
    out[name] = best
    arrays[name] = res
np.savez(dump, **arrays)
print(json.dumps(out))
"""


EXACT = {"simulate_path_2e5", "first_passage_64reps", "threshold_run_T50"}


def run_backend(disable, repeat, dump):
    env = dict(os.environ)
    env["IMPULSELAB_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat), dump], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1]), np.load(dump)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        jit, ja = run_backend(False, args.repeat, os.path.join(tmp, "jit.npz"))
        ref, ra = run_backend(True, args.repeat, os.path.join(tmp, "ref.npz"))
        same = {}
        for k in ja.files:
            a, b = ja[k], ra[k]
            if k in EXACT:
                same[k] = a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            else:
                same[k] = a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=1e-12)
    rows = []
    print(f"{'workload':<24}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  same")
    for k in jit:
        if k == "backend":
            continue
        a, b = jit[k], ref[k]
        rows.append({"workload": k, "numba": a, "numpy": b, "identical": bool(same[k])})
        print(f"{k:<24}{a:>10.4f}{b:>10.4f}{b / a:>9.1f}  {same[k]}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
