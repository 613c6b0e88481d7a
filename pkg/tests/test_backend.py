import json
import os
import subprocess
import sys

import pytest

SCRIPT = r"""
import json
import numpy as np
from hjhomog import _accel
from hjhomog.cell import find_periodic_solutions
from hjhomog.env import nonconvex_benchmark
from hjhomog.ode import displacements
from hjhomog.pde import Grid1D, solve_viscous_hj

env = nonconvex_benchmark(2.0)
d = displacements(env, 1.5, np.linspace(-2.0, 2.0, 41), 0.0, 1.0, 1e-9, 4.0)
run = solve_viscous_hj(env, 1.0, 0.3, Grid1D(0.0, 1.0, 51, 0.5), n_probes=2)
br = find_periodic_solutions(env, 1.5)
print(json.dumps({"backend": _accel.backend_name(),
                  "scan": np.where(np.isfinite(d), d, 1e300).tolist(),
                  "u": run.u_final.tolist(), "theta": [b.theta for b in br]}))
"""


def _run(disable):
    env = {**os.environ, "HJHOMOG_DISABLE_NUMBA": "1" if disable else "0"}
    proc = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True,
                          env=env, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def results():
    return _run(False), _run(True)


def test_backend_selected(results):
    fast, slow = results
    assert fast["backend"] == "numba"
    assert slow["backend"] == "numpy"


def test_backends_agree(results):
    fast, slow = results
    assert fast["scan"] == pytest.approx(slow["scan"], abs=1e-12)
    assert fast["u"] == pytest.approx(slow["u"], abs=1e-12)
    assert fast["theta"] == pytest.approx(slow["theta"], abs=1e-12)
