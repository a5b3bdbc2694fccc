"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version.  ``_accel.USE_NUMBA`` selects which one the public
name is bound to; both stay importable (``*_jit`` / ``*_np``) for the
equivalence tests and the benchmark.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit, pick

# Distance kept between a clamped position and the wall face it hit.
WALL_MARGIN = 1e-9


# ---------------------------------------------------------------------------
# point-mass dynamics
# ---------------------------------------------------------------------------

def _step_loop(walls, cell, dt, damping, max_speed, gx, gy, gr, states, actions):
    n = states.shape[0]
    rows = walls.shape[0]
    out = np.empty((n, 4))
    reward = np.zeros(n)
    margin = WALL_MARGIN * cell
    for i in range(n):
        x = states[i, 0]
        y = states[i, 1]
        ax = min(1.0, max(-1.0, actions[i, 0]))
        ay = min(1.0, max(-1.0, actions[i, 1]))
        vx = min(max_speed, max(-max_speed, damping * states[i, 2] + ax * dt))
        vy = min(max_speed, max(-max_speed, damping * states[i, 3] + ay * dt))

        col = int(math.floor(x / cell))
        row = rows - 1 - int(math.floor(y / cell))
        nx = x + vx * dt
        ncol = int(math.floor(nx / cell))
        if ncol != col and walls[row, ncol]:
            if vx > 0.0:
                nx = (col + 1) * cell - margin
            else:
                nx = col * cell + margin
            vx = 0.0
            ncol = col

        ny = y + vy * dt
        rb = int(math.floor(y / cell))
        nrb = int(math.floor(ny / cell))
        if nrb != rb and walls[rows - 1 - nrb, ncol]:
            if vy > 0.0:
                ny = (rb + 1) * cell - margin
            else:
                ny = rb * cell + margin
            vy = 0.0

        out[i, 0] = nx
        out[i, 1] = ny
        out[i, 2] = vx
        out[i, 3] = vy
        dx = nx - gx
        dy = ny - gy
        if math.sqrt(dx * dx + dy * dy) <= gr:
            reward[i] = 1.0
    return out, reward


def _step_np(walls, cell, dt, damping, max_speed, gx, gy, gr, states, actions):
    rows = walls.shape[0]
    margin = WALL_MARGIN * cell
    x = states[:, 0]
    y = states[:, 1]
    act = np.clip(actions, -1.0, 1.0)
    vx = np.clip(damping * states[:, 2] + act[:, 0] * dt, -max_speed, max_speed)
    vy = np.clip(damping * states[:, 3] + act[:, 1] * dt, -max_speed, max_speed)

    col = np.floor(x / cell).astype(np.int64)
    row = rows - 1 - np.floor(y / cell).astype(np.int64)
    nx = x + vx * dt
    ncol = np.floor(nx / cell).astype(np.int64)
    hit = (ncol != col) & walls[row, ncol]
    nx = np.where(hit, np.where(vx > 0.0, (col + 1) * cell - margin, col * cell + margin), nx)
    vx = np.where(hit, 0.0, vx)
    ncol = np.where(hit, col, ncol)

    ny = y + vy * dt
    rb = np.floor(y / cell).astype(np.int64)
    nrb = np.floor(ny / cell).astype(np.int64)
    hit = (nrb != rb) & walls[rows - 1 - nrb, ncol]
    ny = np.where(hit, np.where(vy > 0.0, (rb + 1) * cell - margin, rb * cell + margin), ny)
    vy = np.where(hit, 0.0, vy)

    out = np.stack([nx, ny, vx, vy], axis=1)
    reward = (np.hypot(nx - gx, ny - gy) <= gr).astype(np.float64)
    return out, reward


step_batch_jit = njit(_step_loop)
step_batch_np = _step_np
step_batch = pick(step_batch_jit, step_batch_np)


# ---------------------------------------------------------------------------
# MLP forward on a flat parameter vector
# ---------------------------------------------------------------------------

def _mlp_forward_flat(flat, sizes, x):
    # Layout per layer: W (fan_in x fan_out, row-major) then b (fan_out).
    h = x
    off = 0
    n_layers = sizes.shape[0] - 1
    for i in range(n_layers):
        fi = sizes[i]
        fo = sizes[i + 1]
        w = flat[off:off + fi * fo].reshape((fi, fo))
        off += fi * fo
        b = flat[off:off + fo]
        off += fo
        h = np.dot(h, w) + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


mlp_forward_flat_jit = njit(_mlp_forward_flat)
mlp_forward_flat_np = _mlp_forward_flat
mlp_forward_flat = pick(mlp_forward_flat_jit, mlp_forward_flat_np)


# ---------------------------------------------------------------------------
# optimizer updates (in place)
# ---------------------------------------------------------------------------

def _adam_loop(param, grad, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(param.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        param[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


def _adam_np(param, grad, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / (1.0 - beta1 ** t)) / (np.sqrt(v / (1.0 - beta2 ** t)) + eps)


def _rms_loop(param, grad, sq, lr, rho, eps):
    for i in range(param.shape[0]):
        g = grad[i]
        sq[i] = rho * sq[i] + (1.0 - rho) * g * g
        param[i] -= lr * g / math.sqrt(sq[i] + eps)


def _rms_np(param, grad, sq, lr, rho, eps):
    sq *= rho
    sq += (1.0 - rho) * grad * grad
    param -= lr * grad / np.sqrt(sq + eps)


adam_update_jit = njit(_adam_loop)
adam_update_np = _adam_np
adam_update = pick(adam_update_jit, adam_update_np)

rms_update_jit = njit(_rms_loop)
rms_update_np = _rms_np
rms_update = pick(rms_update_jit, rms_update_np)


def warmup() -> None:
    """Trigger compilation of every jitted kernel with representative types."""
    walls = np.zeros((3, 3), dtype=np.bool_)
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True
    step_batch(walls, 1.0, 0.1, 0.9, 2.0, 1.5, 1.5, 0.5,
               np.full((1, 4), 1.5), np.zeros((1, 2)))
    sizes = np.array([2, 3, 1], dtype=np.int64)
    flat = np.zeros(2 * 3 + 3 + 3 + 1)
    mlp_forward_flat(flat, sizes, np.zeros(2))
    mlp_forward_flat(flat, sizes, np.zeros((2, 2)))
    p = np.zeros(3)
    adam_update(p, np.zeros(3), np.zeros(3), np.zeros(3), 0.1, 0.9, 0.999, 1e-8, 1)
    rms_update(p, np.zeros(3), np.zeros(3), 0.1, 0.99, 1e-8)
