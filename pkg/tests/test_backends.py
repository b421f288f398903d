"""The numpy fallback must reproduce the jitted backend."""
import os
import subprocess
import sys

import numpy as np
import pytest

import impulselab

SCRIPT = r"""
import sys
import numpy as np
import impulselab as il
from impulselab import catalog, control, estimation

p = catalog.get_problem("ou")
m, r = p.model, p.reward
path = il.simulate_path(m, 0.0, 20.0, 1e-3, 1)
xs = np.linspace(-2, 2, 101)
kde = estimation.KernelDensityEstimate(path, "epanechnikov", 0.1)
hist = estimation.OccupationHistogram(-2.0, 3.5)
hist.add(path.values[:-1], path.dt)
binned = hist.estimate("order3", 0.2)
fpt = il.first_passage_times(m, 0.0, [0.5, 1.0], 16, 1e-3, seed=2, t_cap=100.0)
run = control.run_threshold_strategy(m, r, control.ThresholdStrategy(1.0), 30.0, 1e-3, 3)
sweep = control.threshold_sweep_rates(m, r, np.linspace(0.5, 1.5, 17), 30.0, 1e-3, 3)
dd = control.run_data_driven(m, r, control.ExplorationSchedule(2.5), T=100.0, seed=4)
np.savez(sys.argv[1], backend=il.backend_name(), path=path.values, kde=kde(xs), kde_cdf=kde.cdf(xs),
         binned=binned(xs), binned_cdf=binned.cdf(xs), mass=hist.mass, fpt=fpt,
         run=np.array([iv.t for iv in run.interventions]), sweep=sweep,
         dd=np.array([iv.t for iv in dd.interventions]), dd_y=np.array([y for _, y in dd.threshold_history]))
"""

EXACT = ("path", "fpt", "run", "sweep", "dd", "dd_y")
CLOSE = ("kde", "kde_cdf", "binned", "binned_cdf", "mass")


def _run(tmp_path, disable):
    env = dict(os.environ, IMPULSELAB_DISABLE_NUMBA="1" if disable else "0")
    out = tmp_path / f"{int(disable)}.npz"
    subprocess.run([sys.executable, "-c", SCRIPT, str(out)], env=env, check=True)
    return np.load(out)


@pytest.mark.skipif(not impulselab.USE_NUMBA, reason="numba backend unavailable")
def test_backends_agree(tmp_path):
    jit, ref = _run(tmp_path, False), _run(tmp_path, True)
    assert str(jit["backend"]) == "numba" and str(ref["backend"]) == "numpy"
    for k in EXACT:
        assert np.array_equal(jit[k], ref[k], equal_nan=True), k
    for k in CLOSE:
        np.testing.assert_allclose(jit[k], ref[k], rtol=1e-10, atol=1e-12, err_msg=k)
