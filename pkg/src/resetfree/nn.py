"""Small fully-connected networks with hand-written backprop, plus optimizers.

Parameters of one network live in a single flat float64 vector; per-layer
weight and bias arrays are views into it, so optimizers and Polyak averaging
work on one contiguous buffer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

HEADS = ("linear", "sigmoid", "gaussian")
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
# sigmoid(+-30) stays strictly inside (0, 1) in float64
LOGIT_CLIP = 30.0


def param_count(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _views(flat: np.ndarray, sizes):
    weights, biases = [], []
    off = 0
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + fi * fo].reshape(fi, fo))
        off += fi * fo
        biases.append(flat[off:off + fo])
        off += fo
    return weights, biases


class Mlp:
    """ReLU MLP with a linear output layer followed by an optional head."""

    def __init__(self, sizes, head: str = "linear", flat: np.ndarray | None = None):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if head == "gaussian" and self.sizes[-1] % 2:
            raise ValueError("gaussian head needs an even output size (mean, log-std)")
        self.head = head
        self._sizes_arr = np.array(self.sizes, dtype=np.int64)
        n = param_count(self.sizes)
        if flat is None:
            self.flat = np.zeros(n)
        else:
            flat = np.asarray(flat, dtype=np.float64)
            if flat.shape != (n,):
                raise ValueError(f"expected {n} parameters, got shape {flat.shape}")
            self.flat = flat.copy()
        self.weights, self.biases = _views(self.flat, self.sizes)

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, head: str = "linear",
             final_scale: float = 1.0) -> "Mlp":
        """Fan-in scaled uniform init; the last layer is multiplied by ``final_scale``."""
        net = cls(sizes, head)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
            if i == len(net.weights) - 1:
                w *= final_scale
                b *= final_scale
        return net

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.head, self.flat)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(
                f"layer 0 expects input dim {self.sizes[0]}, got {x.shape[-1]}")
        return x

    def raw(self, x) -> np.ndarray:
        """Pre-head output; fast path used for single states and rollouts."""
        x = np.ascontiguousarray(self._check_input(x))
        return kernels.mlp_forward_flat(self.flat, self._sizes_arr, x)

    def forward(self, x):
        """Pre-head output for a batch plus the activations needed by ``backward``."""
        h = self._check_input(x)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, upstream, input_grad: bool = False):
        """Gradient of ``sum(raw_output * upstream)`` w.r.t. the flat parameters.

        Returns ``(grad_flat, dx)``; ``dx`` is None unless ``input_grad``.
        """
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream shape {g.shape} != output shape {acts[-1].shape}")
        grad = np.empty_like(self.flat)
        gw, gb = _views(grad, self.sizes)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = acts[i]
            if a_in.ndim == 1:
                gw[i][...] = np.outer(a_in, g)
                gb[i][...] = g
            else:
                gw[i][...] = a_in.T @ g
                gb[i][...] = g.sum(axis=0)
            if i > 0 or input_grad:
                g = g @ self.weights[i].T
                if i > 0:
                    g = g * (acts[i] > 0.0)
        return grad, (g if input_grad else None)


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def split_gaussian(raw: np.ndarray):
    """Split a gaussian-head output into ``(mean, clamped log_std, clamp mask)``."""
    k = raw.shape[-1] // 2
    mean = raw[..., :k]
    log_std_raw = raw[..., k:]
    log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
    inside = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    return mean, log_std, inside


def apply_head(net: Mlp, raw: np.ndarray) -> np.ndarray:
    if net.head == "linear":
        return raw
    if net.head == "sigmoid":
        return sigmoid(np.clip(raw, -LOGIT_CLIP, LOGIT_CLIP))
    mean, log_std, _ = split_gaussian(raw)
    return np.concatenate([mean, log_std], axis=-1)


def head_backward(net: Mlp, raw: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Map an upstream gradient on the head output to one on the raw output."""
    if net.head == "linear":
        return upstream
    if net.head == "sigmoid":
        p = sigmoid(np.clip(raw, -LOGIT_CLIP, LOGIT_CLIP))
        live = np.abs(raw) < LOGIT_CLIP
        return upstream * p * (1.0 - p) * live
    k = raw.shape[-1] // 2
    _, _, inside = split_gaussian(raw)
    out = np.array(upstream, dtype=np.float64, copy=True)
    out[..., k:] *= inside
    return out


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Head output for a single input vector or a batch."""
    return apply_head(net, net.raw(x))


def mlp_gradient(net: Mlp, x, upstream) -> np.ndarray:
    """Flat gradient of ``sum(mlp_forward(net, x) * upstream)``."""
    raw, acts = net.forward(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != raw.shape:
        raise ValueError(f"upstream shape {upstream.shape} != output shape {raw.shape}")
    grad, _ = net.backward(acts, head_backward(net, raw, upstream))
    return grad


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    scheme = "adam"

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def accumulators(self) -> dict[str, np.ndarray]:
        return {"m": self.m, "v": self.v}

    def hyper(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def apply(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.step += 1
        kernels.adam_update(params, grad, self.m, self.v, self.lr,
                            self.beta1, self.beta2, self.eps, self.step)


@dataclass
class RMSprop:
    """Momentum-free RMS scaling: ``p -= lr * g / sqrt(E[g^2] + eps)``."""

    lr: float
    size: int
    rho: float = 0.99
    eps: float = 1e-8
    step: int = 0
    sq: np.ndarray = field(default=None, repr=False)

    scheme = "rmsprop"

    def __post_init__(self):
        if self.sq is None:
            self.sq = np.zeros(self.size)

    def accumulators(self) -> dict[str, np.ndarray]:
        return {"sq": self.sq}

    def hyper(self) -> dict:
        return {"rho": self.rho, "eps": self.eps}

    def apply(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.step += 1
        kernels.rms_update(params, grad, self.sq, self.lr, self.rho, self.eps)


OPTIMIZERS = {"adam": Adam, "rmsprop": RMSprop}


def optimizer_step(opt, net: Mlp, grad: np.ndarray) -> None:
    """Apply one update to ``net`` in place; rejects non-finite gradients."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.flat.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {net.flat.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise FloatingPointError(f"non-finite gradient at parameter index {bad}")
    opt.apply(net.flat, grad)


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """``target <- (1 - tau) * target + tau * online``, in place."""
    if target.sizes != online.sizes:
        raise ValueError("target and online networks differ in shape")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(net: Mlp, loss_and_grad, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad(net)`` must return ``(loss, flat_grad)`` and depend on the
    parameters only through ``net.flat``.
    """
    _, analytic = loss_and_grad(net)
    analytic = np.array(analytic, dtype=np.float64)
    numeric = np.empty_like(analytic)
    for i in range(net.flat.size):
        orig = net.flat[i]
        net.flat[i] = orig + h
        lp, _ = loss_and_grad(net)
        net.flat[i] = orig - h
        lm, _ = loss_and_grad(net)
        net.flat[i] = orig
        numeric[i] = (lp - lm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"RFNET 1\n"


def save_network(path, net: Mlp, opt=None) -> None:
    """One file per network: magic line, JSON header line, little-endian f8 payload."""
    header = {"sizes": list(net.sizes), "head": net.head, "n_params": int(net.flat.size),
              "optimizer": None}
    blobs = [net.flat]
    if opt is not None:
        acc = opt.accumulators()
        header["optimizer"] = {"scheme": opt.scheme, "lr": opt.lr, "step": opt.step,
                               "hyper": opt.hyper(), "accumulators": list(acc)}
        blobs.extend(acc.values())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def load_network(path):
    """Inverse of ``save_network``; returns ``(net, optimizer_or_None)``."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a network checkpoint")
    nl = data.index(b"\n", len(_MAGIC))
    header = json.loads(data[len(_MAGIC):nl].decode("utf-8"))
    payload = np.frombuffer(data[nl + 1:], dtype="<f8").astype(np.float64)
    n = header["n_params"]
    net = Mlp(header["sizes"], header["head"], payload[:n])
    opt = None
    spec = header["optimizer"]
    if spec is not None:
        cls = OPTIMIZERS[spec["scheme"]]
        arrays = {}
        off = n
        for name in spec["accumulators"]:
            arrays[name] = payload[off:off + n].copy()
            off += n
        opt = cls(lr=spec["lr"], size=n, step=spec["step"], **spec["hyper"], **arrays)
        if off != payload.size:
            raise ValueError(f"{path}: trailing bytes in checkpoint")
    elif payload.size != n:
        raise ValueError(f"{path}: payload size mismatch")
    return net, opt
