"""Random network distillation: novelty reward for the reset agent."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nn import Adam, Mlp, optimizer_step

OBS_CLIP = 5.0


@dataclass
class RunningStats:
    """Mean/variance over everything seen so far (parallel-merge form)."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 0.0

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), 0.0)

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = b_mean, b_var, float(n)
            return
        total = self.count + n
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * n + delta * delta * self.count * n / total
        self.mean = self.mean + delta * n / total
        self.var = m2 / total
        self.count = total


@dataclass
class RndConfig:
    hidden: tuple[int, ...] = (64, 64)
    embedding_dim: int = 64
    lr: float = 1e-4
    normalize_reward: bool = True


class RndModel:
    def __init__(self, obs_dim: int, config: RndConfig, rng: np.random.Generator,
                 obs_low=None, obs_high=None):
        self.config = config
        sizes = (obs_dim, *config.hidden, config.embedding_dim)
        self.target = Mlp.init(sizes, rng)
        self.predictor = Mlp.init(sizes, rng)
        self.opt = Adam(config.lr, self.predictor.flat.size)
        self.obs_stats = RunningStats.zeros(obs_dim)
        self.reward_stats = RunningStats.zeros(1)
        self.obs_low = np.zeros(obs_dim) if obs_low is None else np.asarray(obs_low, float)
        span = np.ones(obs_dim) if obs_high is None else np.asarray(obs_high, float) - self.obs_low
        self.obs_scale = 1.0 / span

    def whiten(self, states) -> np.ndarray:
        x = (np.asarray(states, dtype=np.float64) - self.obs_low) * self.obs_scale
        z = (x - self.obs_stats.mean) / np.sqrt(self.obs_stats.var + 1e-8)
        return np.clip(z, -OBS_CLIP, OBS_CLIP)

    def raw_error(self, states) -> np.ndarray:
        z = np.ascontiguousarray(self.whiten(states))
        diff = self.predictor.raw(z) - self.target.raw(z)
        return np.sum(diff * diff, axis=-1)

    def reward_std(self) -> float:
        return float(np.sqrt(self.reward_stats.var[0] + 1e-8))

    def target_digest(self) -> str:
        return hashlib.sha256(self.target.flat.tobytes()).hexdigest()


def intrinsic_reward(model: RndModel, state) -> float | np.ndarray:
    """Squared embedding error, divided by the running std of raw errors when enabled."""
    err = model.raw_error(state)
    if model.config.normalize_reward:
        err = err / model.reward_std()
    return err


def rnd_loss_and_grad(predictor: Mlp, inputs: np.ndarray, target_out: np.ndarray):
    """Mean (over batch and embedding) squared error of predictor vs frozen target."""
    out, acts = predictor.forward(inputs)
    diff = out - target_out
    loss = float(np.mean(diff * diff))
    grad, _ = predictor.backward(acts, (2.0 / diff.size) * diff)
    return loss, grad


def rnd_update(model: RndModel, states) -> float:
    """Refresh normaliser statistics, then one Adam step on the predictor."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ValueError("rnd_update needs a non-empty batch of states")
    x = (states - model.obs_low) * model.obs_scale
    model.obs_stats.update(x)
    z = np.ascontiguousarray(model.whiten(states))
    target_out = model.target.raw(z)
    loss, grad = rnd_loss_and_grad(model.predictor, z, target_out)
    raw = np.sum((model.predictor.raw(z) - target_out) ** 2, axis=-1)
    model.reward_stats.update(raw[:, None])
    optimizer_step(model.opt, model.predictor, grad)
    return loss
