"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time through HJHOMOG_DISABLE_NUMBA.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, time
import numpy as np
from hjhomog import _accel, kernels
from hjhomog.env import nonconvex_benchmark
from hjhomog.ode import displacements
from hjhomog.pde import Grid1D, solve_viscous_hj

env = nonconvex_benchmark(2.0)
ps = np.linspace(-2.0, 2.0, {n_scan})

def scan():
    return displacements(env, 1.5, ps, 0.0, 1.0, 1e-9, 4.0)

def pde():
    return solve_viscous_hj(env, 1.0, 0.3, Grid1D(0.0, 1.0, 101, {t_pde}), n_probes=4)

scan(); pde()          # compile / warm up
out = {{"backend": _accel.backend_name()}}
for name, fn in (("displacement_scan", scan), ("hj_steps", pde)):
    best = float("inf")
    for _ in range({repeat}):
        t = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t)
    out[name] = best
out["scan_checksum"] = float(np.nansum(np.where(np.isfinite(scan()), scan(), 0.0)))
out["pde_checksum"] = float(pde().u_final.sum())
print(json.dumps(out))
"""


def run(disable, repeat, n_scan, t_pde):
    env = dict(os.environ)
    env["HJHOMOG_DISABLE_NUMBA"] = "1" if disable else "0"
    code = WORKLOAD.format(repeat=repeat, n_scan=n_scan, t_pde=t_pde)
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n-scan", type=int, default=41)
    ap.add_argument("--t-pde", type=float, default=0.05)
    args = ap.parse_args(argv)
    fast = run(False, args.repeat, args.n_scan, args.t_pde)
    slow = run(True, args.repeat, args.n_scan, args.t_pde)
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name in ("displacement_scan", "hj_steps"):
        print(f"{name:<20}{fast[name]:>12.4f}{slow[name]:>12.4f}{slow[name] / fast[name]:>10.1f}")
    for key in ("scan_checksum", "pde_checksum"):
        diff = abs(fast[key] - slow[key])
        print(f"{key}: numba={fast[key]:.12g} numpy={slow[key]:.12g} |diff|={diff:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
