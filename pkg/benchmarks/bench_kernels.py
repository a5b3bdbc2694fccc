"""Time the compiled kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and workload size with the median time of each path
and the speed-up. Single-row workloads dominate training (one environment step,
one action per step); batched workloads dominate evaluation and learner updates.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from resetfree import kernels as k
from resetfree import maze as mz
from resetfree._accel import HAVE_NUMBA
from resetfree.nn import Mlp


def _median_us(fn, repeat: int, inner: int) -> float:
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner * 1e6)
    return statistics.median(samples)


def _cases(rng):
    spec = mz.load_named_maze("4way")
    for n in (1, 100, 10_000):
        states = mz.sample_uniform_valid_many(spec, n, rng)
        acts = rng.uniform(-1, 1, size=(n, 2))
        args = (spec.walls, spec.cell_size, spec.dt, spec.damping, spec.max_speed,
                spec.goal_center[0], spec.goal_center[1], spec.goal_radius, states, acts)
        yield f"env_step n={n}", lambda a=args: k.step_batch_jit(*a), \
            lambda a=args: k.step_batch_np(*a)

    for width, n in ((64, 1), (64, 64), (256, 256)):
        net = Mlp.init((6, width, width, 4), rng)
        sizes = np.asarray(net.sizes, dtype=np.int64)
        x = rng.normal(size=(n, 6))
        yield f"mlp_forward {width}w n={n}", \
            lambda f=net.flat, s=sizes, x=x: k.mlp_forward_flat_jit(f, s, x), \
            lambda f=net.flat, s=sizes, x=x: k.mlp_forward_flat_np(f, s, x)

    for size in (5_000, 70_000):
        p, g = rng.normal(size=size), rng.normal(size=size)
        m, v, sq = np.zeros(size), np.zeros(size), np.zeros(size)
        yield f"adam p={size}", \
            lambda: k.adam_update_jit(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 10), \
            lambda: k.adam_update_np(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 10)
        yield f"rmsprop p={size}", \
            lambda: k.rms_update_jit(p, g, sq, 1e-4, 0.99, 1e-8), \
            lambda: k.rms_update_np(p, g, sq, 1e-4, 0.99, 1e-8)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists")
        return 1
    k.warmup()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba us':>12}{'numpy us':>12}{'speed-up':>10}")
    for name, jit_fn, np_fn in _cases(rng):
        jit_fn()
        inner = max(1, int(2e4 / max(1.0, _median_us(np_fn, 1, 1))))
        t_jit = _median_us(jit_fn, args.repeat, inner)
        t_np = _median_us(np_fn, args.repeat, inner)
        print(f"{name:<28}{t_jit:>12.2f}{t_np:>12.2f}{t_np / t_jit:>10.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
