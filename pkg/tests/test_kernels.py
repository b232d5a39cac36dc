"""numba and numpy kernels must agree; the env flag must select the numpy path."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from demonoise import _kernels as k
from demonoise.ckm import build_ptable
from demonoise.uncertainty import NoiseConfig

pytestmark = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def rates():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.0, 0.4, size=(50, 86))
    r[:, -1] += 0.05
    return r


def test_life_table(rates):
    for row in rates[:5]:
        for a, b in zip(k.life_table_np(row, 1e5), k.life_table_nb(row, 1e5)):
            np.testing.assert_allclose(a, b, rtol=1e-13)


def test_life_expectancy_batch(rates):
    np.testing.assert_allclose(k.life_expectancy_batch_np(rates, 1e5), k.life_expectancy_batch_nb(rates, 1e5), rtol=1e-13)
    single = np.array([k.life_table_np(r, 1e5)[3] for r in rates])
    np.testing.assert_allclose(k.life_expectancy_batch_np(rates, 1e5), single, rtol=1e-13)


def test_ex_variance(rates):
    ell = k.life_table_np(rates[0], 1e5)[0]
    w = np.random.default_rng(1).uniform(0, 1e6, ell.size)
    np.testing.assert_allclose(k.ex_variance_np(ell, w), k.ex_variance_nb(ell, w), rtol=1e-13)


def test_keyed_uniforms_bit_identical():
    keys = np.random.default_rng(2).integers(0, 2**63, size=7, dtype=np.uint64)
    cells = np.arange(1000, dtype=np.uint64)
    a = k.keyed_uniforms_np(keys, cells)
    b = k.keyed_uniforms_nb(keys, cells)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0.0 and a.max() < 1.0


def test_sample_noise_identical():
    table = build_ptable(NoiseConfig(2.0, 5, 2))
    rng = np.random.default_rng(3)
    u = rng.random((20, 300))
    rows = rng.integers(0, table.interior_row + 1, size=u.shape)
    np.testing.assert_array_equal(
        k.sample_noise_np(u, rows, table.cdf, 5), k.sample_noise_nb(u, rows, table.cdf, 5)
    )


def test_env_flag_forces_numpy(tmp_path):
    script = (
        "import json, sys\n"
        "from demonoise import _kernels\n"
        "from demonoise.simulate import synthetic_schedule, validate_delta_ex\n"
        "rep = validate_delta_ex(synthetic_schedule(1e5), replicates=100, seed=3)\n"
        "json.dump({'backend': _kernels.backend(), 'sd': rep.sd.tolist()}, sys.stdout)\n"
    )
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, DEMONOISE_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        results[flag] = json.loads(proc.stdout)
    assert results["0"]["backend"] == "numba"
    assert results["1"]["backend"] == "numpy"
    np.testing.assert_allclose(results["0"]["sd"], results["1"]["sd"], rtol=1e-10)
