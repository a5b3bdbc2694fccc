"""The compiled and numpy kernels must agree; either may back the public names."""
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resetfree import kernels as k
from resetfree import maze as mz
from resetfree._accel import HAVE_NUMBA
from resetfree.nn import Mlp


def _step_args(spec, states, actions):
    return (spec.walls, spec.cell_size, spec.dt, spec.damping, spec.max_speed,
            spec.goal_center[0], spec.goal_center[1], spec.goal_radius, states, actions)


@pytest.mark.parametrize("name", ["1way", "2way", "4way"])
def test_step_kernels_agree(name):
    spec = mz.load_named_maze(name)
    rng = np.random.default_rng(0)
    states = mz.sample_uniform_valid_many(spec, 2000, rng)
    states[:, 2:] = rng.uniform(-spec.max_speed, spec.max_speed, size=(2000, 2))
    for _ in range(50):
        actions = rng.uniform(-1.5, 1.5, size=(2000, 2))
        a_out, a_rew = k.step_batch_jit(*_step_args(spec, states, actions))
        b_out, b_rew = k.step_batch_np(*_step_args(spec, states, actions))
        np.testing.assert_array_equal(a_out, b_out)
        np.testing.assert_array_equal(a_rew, b_rew)
        states = a_out


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=4), st.integers(1, 9),
       st.integers(0, 2**31 - 1))
def test_mlp_forward_kernels_agree(hidden, batch, seed):
    rng = np.random.default_rng(seed)
    net = Mlp.init((5, *hidden, 3), rng)
    x = rng.normal(size=(batch, 5))
    sizes = np.asarray(net.sizes, dtype=np.int64)
    np.testing.assert_allclose(k.mlp_forward_flat_jit(net.flat, sizes, x),
                               k.mlp_forward_flat_np(net.flat, sizes, x), rtol=1e-12, atol=1e-12)


def test_optimizer_kernels_agree():
    rng = np.random.default_rng(1)
    p0 = rng.normal(size=257)
    pa, pb = p0.copy(), p0.copy()
    ma, mb, va, vb = (np.zeros(257) for _ in range(4))
    sa, sb = np.zeros(257), np.zeros(257)
    qa, qb = p0.copy(), p0.copy()
    for t in range(1, 30):
        g = rng.normal(size=257)
        k.adam_update_jit(pa, g, ma, va, 1e-3, 0.9, 0.999, 1e-8, t)
        k.adam_update_np(pb, g, mb, vb, 1e-3, 0.9, 0.999, 1e-8, t)
        k.rms_update_jit(qa, g, sa, 1e-3, 0.99, 1e-8)
        k.rms_update_np(qb, g, sb, 1e-3, 0.99, 1e-8)
    np.testing.assert_allclose(pa, pb, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(qa, qb, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(sa, sb, rtol=1e-12)


def test_env_flag_selects_numpy_path():
    code = ("import resetfree.kernels as k, resetfree._accel as a;"
            "print(a.USE_NUMBA, k.step_batch is k.step_batch_np)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"RESETFREE_NUMBA": "0", "PATH": ""}, check=True).stdout.split()
    assert out == ["False", "True"]


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_default_path_is_compiled():
    code = "import resetfree.kernels as k; print(k.step_batch is k.step_batch_jit)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"PATH": ""}, check=True).stdout.strip()
    assert out == "True"
