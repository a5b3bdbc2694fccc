"""Success discriminator C(s, a) and the start-state gate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LOGIT_CLIP, Mlp, RMSprop, optimizer_step, sigmoid
from .sac import ReplayBuffer

# Probabilities are kept this far from {0, 1} inside the loss.
BCE_EPS = 1e-7


@dataclass(frozen=True)
class GateThresholds:
    low: float = 0.3
    high: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError(f"need 0 <= low <= high <= 1, got ({self.low}, {self.high})")


def gate_allows(thresholds: GateThresholds, p: float) -> bool:
    return thresholds.low <= p <= thresholds.high


@dataclass
class LabeledBatch:
    inputs: np.ndarray  # normalized state ++ action
    labels: np.ndarray
    n_pos: int
    n_neg: int


class Discriminator:
    def __init__(self, obs_dim: int, act_dim: int, hidden, lr: float,
                 rng: np.random.Generator, obs_low=None, obs_high=None,
                 rho: float = 0.99, eps: float = 1e-8):
        # Zero output layer: every estimate starts at exactly 0.5.
        self.net = Mlp.init((obs_dim + act_dim, *hidden, 1), rng, head="sigmoid",
                            final_scale=0.0)
        self.opt = RMSprop(lr, self.net.flat.size, rho=rho, eps=eps)
        self.obs_low = np.zeros(obs_dim) if obs_low is None else np.asarray(obs_low, float)
        span = np.ones(obs_dim) if obs_high is None else np.asarray(obs_high, float) - self.obs_low
        self.obs_scale = 1.0 / span

    def inputs(self, states, actions) -> np.ndarray:
        obs = (np.asarray(states, dtype=np.float64) - self.obs_low) * self.obs_scale
        return np.concatenate([obs, np.asarray(actions, dtype=np.float64)], axis=-1)

    def probability(self, inputs) -> np.ndarray:
        z = self.net.raw(inputs)[..., 0]
        return sigmoid(np.clip(z, -LOGIT_CLIP, LOGIT_CLIP))


def estimate(disc: Discriminator, state, action):
    """Estimated success probability for one ``(state, action)`` or a batch."""
    p = disc.probability(disc.inputs(state, action))
    return float(p) if np.ndim(p) == 0 else p


def prior_corrected(p, n_pos: int, n_neg: int):
    """Re-express an estimate learned from 50/50 batches under an ``n_pos : n_neg`` label prior.

    A classifier fit on balanced batches outputs odds P(s|1) / P(s|0). Scaling those
    odds by n_pos / n_neg gives the success probability under the data's own mix.
    With either count zero there is nothing to correct and ``p`` passes through.
    """
    if n_pos <= 0 or n_neg <= 0:
        return p
    num = p * n_pos
    return num / (num + (1.0 - p) * n_neg)


def balanced_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator,
                    disc: Discriminator | None = None) -> LabeledBatch | None:
    """Draw n/2 successful and n/2 failed transitions; None while a pool is empty."""
    if n % 2:
        raise ValueError(f"batch size must be even, got {n}")
    if len(buffer.pos_pool) == 0 or len(buffer.neg_pool) == 0:
        return None
    half = n // 2
    idx = np.concatenate([buffer.pos_pool.sample(half, rng), buffer.neg_pool.sample(half, rng)])
    labels = buffer.c[idx].astype(np.float64)
    if disc is None:
        obs = buffer.s[idx]
        inputs = np.concatenate([obs, buffer.a[idx]], axis=1)
    else:
        inputs = disc.inputs(buffer.s[idx], buffer.a[idx])
    return LabeledBatch(inputs, labels, int(labels.sum()), int(n - labels.sum()))


def bce_loss_and_grad(net: Mlp, inputs: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy with eps-guarded probabilities."""
    z, acts = net.forward(inputs)
    z = z[:, 0]
    zc = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
    p = sigmoid(zc)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc)))
    live = (np.abs(z) < LOGIT_CLIP) & (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    dz = (p - labels) / labels.size * live
    grad, _ = net.backward(acts, dz[:, None])
    return loss, grad


def discriminator_update(disc: Discriminator, batch: LabeledBatch) -> float:
    """One RMSprop step on the BCE loss; returns the loss before the step."""
    if batch.labels.size == 0:
        raise ValueError("empty batch")
    loss, grad = bce_loss_and_grad(disc.net, batch.inputs, batch.labels)
    optimizer_step(disc.opt, disc.net, grad)
    return loss
