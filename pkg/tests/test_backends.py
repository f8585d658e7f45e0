import os
import subprocess
import sys

import numpy as np
import pytest

from multistage_mi import _backend
from multistage_mi.imputer import ImputationSpec, chained_impute
from multistage_mi.numerics import RngStream

compiled = pytest.mark.skipif(_backend.compiled_run_chain is None, reason="compiled kernel not built")
NAMES = ["x1", "y1", "x2", "y2"]


def targets(d):
    return [c for c in NAMES if not d.mask[:, d.schema.index(c)].all()]


@compiled
@pytest.mark.parametrize("method", ["norm", "pmm"])
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(incomplete_sample, method, seed):
    spec = ImputationSpec.all_others(targets(incomplete_sample), NAMES, method, m=2)
    a = chained_impute(incomplete_sample, spec, RngStream(seed), _backend.compiled_run_chain)
    b = chained_impute(incomplete_sample, spec, RngStream(seed), _backend.python_run_chain)
    for x, y in zip(a.members(), b.members()):
        if method == "pmm":
            np.testing.assert_array_equal(x.to_array(), y.to_array())
        else:
            np.testing.assert_allclose(x.to_array(), y.to_array(), rtol=1e-9, atol=1e-9)


@compiled
def test_backends_agree_monotone(monotone_sample):
    spec = ImputationSpec.all_others(targets(monotone_sample), NAMES, m=2, iterations=3)
    a = chained_impute(monotone_sample, spec, RngStream(1), _backend.compiled_run_chain)
    b = chained_impute(monotone_sample, spec, RngStream(1), _backend.python_run_chain)
    for x, y in zip(a.members(), b.members()):
        np.testing.assert_allclose(x.to_array(), y.to_array(), rtol=1e-9, atol=1e-9)


def test_env_forces_fallback():
    env = dict(os.environ, MULTISTAGE_MI_BACKEND="python")
    out = subprocess.run(
        [sys.executable, "-c", "from multistage_mi import _backend; print(_backend.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_default_backend_name():
    assert _backend.BACKEND in ("cython", "python")
    if _backend.compiled_run_chain is not None and os.environ.get("MULTISTAGE_MI_BACKEND") != "python":
        assert _backend.BACKEND == "cython"
