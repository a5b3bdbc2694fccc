"""Soft actor-critic with a tanh-squashed Gaussian actor and twin critics.

Used for both the forward (task) agent and the reset (exploration) agent; the
two share no parameters or buffers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nn import Adam, Mlp, optimizer_step, polyak_update, split_gaussian

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


# ---------------------------------------------------------------------------
# squashed Gaussian
# ---------------------------------------------------------------------------

def log1m_tanh2(u):
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def squash_sample(mean, log_std, noise):
    """Reparameterised sample; returns ``(action, log_prob, pre_tanh)``."""
    u = mean + np.exp(log_std) * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise * noise - log_std - 0.5 * LOG_2PI - log1m_tanh2(u), axis=-1)
    return a, logp, u


def squashed_logprob(mean, log_std, action):
    """Density of a squashed Gaussian at ``action`` (components strictly inside (-1, 1))."""
    u = np.arctanh(action)
    noise = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * noise * noise - log_std - 0.5 * LOG_2PI - log1m_tanh2(u), axis=-1)


# ---------------------------------------------------------------------------
# transitions and replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool
    c: int | None = None
    episode_id: int = -1


def relabel_rollout(rollout: list[Transition]) -> list[Transition]:
    """Give every transition of a finished rollout the success label of its last one."""
    if not rollout:
        raise ValueError("cannot relabel an empty rollout")
    final = rollout[-1].c
    return [replace(t, c=final) for t in rollout]


class IndexPool:
    """Set of slot indices with O(1) insert, delete and uniform sampling."""

    def __init__(self):
        self._items = np.empty(1024, dtype=np.int64)
        self._where: dict[int, int] = {}
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def __contains__(self, slot) -> bool:
        return int(slot) in self._where

    def add(self, slot: int) -> None:
        slot = int(slot)
        if slot in self._where:
            return
        if self.count == self._items.size:
            self._items = np.concatenate([self._items, np.empty_like(self._items)])
        self._items[self.count] = slot
        self._where[slot] = self.count
        self.count += 1

    def discard(self, slot: int) -> None:
        i = self._where.pop(int(slot), None)
        if i is None:
            return
        self.count -= 1
        last = int(self._items[self.count])
        if i != self.count:
            self._items[i] = last
            self._where[last] = i

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self._items[rng.integers(0, self.count, size=n)]

    def items(self) -> np.ndarray:
        return self._items[:self.count].copy()


class ReplayBuffer:
    """FIFO ring of transitions, grown lazily up to ``capacity``.

    A forward buffer additionally keeps the success label ``c`` of each slot and
    two pools (successful / failed) holding slots of finished, relabelled
    episodes.  Slots of the episode in progress belong to neither pool.
    """

    def __init__(self, capacity: int, role: str = "forward", obs_dim: int = 4,
                 act_dim: int = 2, initial: int = 4096):
        if role not in ("forward", "reset"):
            raise ValueError(f"unknown buffer role {role!r}")
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.role = role
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.size = 0
        self.ptr = 0
        self.pushed = 0
        self._alloc(min(self.capacity, initial))
        self.pos_pool = IndexPool()
        self.neg_pool = IndexPool()

    def _alloc(self, n: int) -> None:
        old = getattr(self, "s", None)
        new = {
            "s": np.zeros((n, self.obs_dim)),
            "a": np.zeros((n, self.act_dim)),
            "r": np.zeros(n),
            "s2": np.zeros((n, self.obs_dim)),
            "done": np.zeros(n),
            "c": np.full(n, -1, dtype=np.int8),
            "episode": np.full(n, -1, dtype=np.int64),
        }
        if old is not None:
            for key, arr in new.items():
                arr[:self.size] = getattr(self, key)[:self.size]
        for key, arr in new.items():
            setattr(self, key, arr)

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done, c=None, episode: int = -1) -> int:
        if (c is None) != (self.role == "reset"):
            raise ValueError(f"success label must be given iff role is forward (role={self.role})")
        if self.size < self.capacity and self.ptr == self.s.shape[0]:
            self._alloc(min(self.capacity, 2 * self.s.shape[0]))
        slot = self.ptr
        if self.size == self.capacity:
            self.pos_pool.discard(slot)
            self.neg_pool.discard(slot)
        self.s[slot] = s
        self.a[slot] = a
        self.r[slot] = r
        self.s2[slot] = s2
        self.done[slot] = float(done)
        self.c[slot] = -1 if c is None else int(c)
        self.episode[slot] = episode
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushed += 1
        return slot

    def push(self, t: Transition) -> int:
        return self.add(t.s, t.a, t.r, t.s2, t.done, t.c, t.episode_id)

    def extend(self, s, a, r, s2, done, c=None, episode=None) -> np.ndarray:
        """Bulk ``add``; returns the slots written."""
        n = len(r)
        if (c is None) != (self.role == "reset"):
            raise ValueError(f"success labels must be given iff role is forward (role={self.role})")
        if self.size + n <= self.capacity and self.ptr == self.size:
            need = self.size + n
            if need > self.s.shape[0]:
                alloc = self.s.shape[0]
                while alloc < need:
                    alloc *= 2
                self._alloc(min(self.capacity, alloc))
            slots = np.arange(self.size, need)
            self.s[slots] = s
            self.a[slots] = a
            self.r[slots] = r
            self.s2[slots] = s2
            self.done[slots] = np.asarray(done, dtype=np.float64)
            self.c[slots] = -1 if c is None else np.asarray(c)
            self.episode[slots] = -1 if episode is None else np.asarray(episode)
            self.size = need
            self.ptr = need % self.capacity
            self.pushed += n
            return slots
        slots = np.empty(n, dtype=np.int64)
        for i in range(n):
            slots[i] = self.add(s[i], a[i], r[i], s2[i], done[i],
                                None if c is None else c[i],
                                -1 if episode is None else episode[i])
        return slots

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s2": self.s2[idx], "done": self.done[idx], "c": self.c[idx],
                "episode": self.episode[idx]}

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return self.gather(self.sample_indices(n, rng))

    def transition(self, slot: int) -> Transition:
        c = None if self.role == "reset" else int(self.c[slot])
        return Transition(self.s[slot].copy(), self.a[slot].copy(), float(self.r[slot]),
                          self.s2[slot].copy(), bool(self.done[slot]), c,
                          int(self.episode[slot]))

    def finish_episode(self, slots, label: int, episode: int) -> None:
        """Relabel the slots of a finished episode and make them eligible for sampling."""
        pool = self.pos_pool if label else self.neg_pool
        for slot in slots:
            if self.episode[slot] != episode:
                continue  # already overwritten
            self.c[slot] = label
            pool.add(slot)

    def metadata(self) -> dict:
        return {"role": self.role, "capacity": self.capacity, "size": self.size,
                "ptr": self.ptr, "pushed": self.pushed,
                "positives": len(self.pos_pool), "negatives": len(self.neg_pool)}


def buffer_push(buffer: ReplayBuffer, t: Transition) -> int:
    return buffer.push(t)


def buffer_sample(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> list[Transition]:
    return [buffer.transition(i) for i in buffer.sample_indices(n, rng)]


# ---------------------------------------------------------------------------
# losses (pure functions of parameters, used by the update and the gradient checks)
# ---------------------------------------------------------------------------

def critic_loss_and_grad(q: Mlp, inputs: np.ndarray, target: np.ndarray):
    """Mean squared error of one critic against fixed targets."""
    out, acts = q.forward(inputs)
    err = out[:, 0] - target
    loss = float(np.mean(err * err))
    grad, _ = q.backward(acts, (2.0 / err.size) * err[:, None])
    return loss, grad, out[:, 0]


def actor_loss_and_grad(actor: Mlp, q1: Mlp, q2: Mlp, obs: np.ndarray,
                        noise: np.ndarray, alpha: float):
    """``mean(alpha * log pi(a~|s) - min(Q1, Q2)(s, a~))`` with ``a~`` reparameterised."""
    n, k = noise.shape
    raw, acts = actor.forward(obs)
    mean, log_std, inside = split_gaussian(raw)
    a, logp, _ = squash_sample(mean, log_std, noise)
    x = np.concatenate([obs, a], axis=1)
    o1, c1 = q1.forward(x)
    o2, c2 = q2.forward(x)
    qmin = np.minimum(o1[:, 0], o2[:, 0])
    loss = float(np.mean(alpha * logp - qmin))

    pick1 = (o1[:, 0] <= o2[:, 0]).astype(np.float64)[:, None]
    _, dx1 = q1.backward(c1, -pick1 / n, input_grad=True)
    _, dx2 = q2.backward(c2, -(1.0 - pick1) / n, input_grad=True)
    dq_da = -(dx1[:, obs.shape[1]:] + dx2[:, obs.shape[1]:])  # d(mean qmin)/da

    du = (alpha / n) * 2.0 * a - dq_da * (1.0 - a * a)
    d_mean = du
    d_log_std = (du * np.exp(log_std) * noise - alpha / n) * inside
    grad, _ = actor.backward(acts, np.concatenate([d_mean, d_log_std], axis=1))
    return loss, grad


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

@dataclass
class SacConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-4
    gamma: float = 0.99
    alpha: float = 0.4
    tau: float = 0.005
    batch_size: int = 256
    reward_scale: float = 1.0
    # Measure entropy against the uniform action prior, so the per-step bonus is never positive.
    uniform_prior: bool = False


class SacAgent:
    def __init__(self, obs_dim: int, act_dim: int, config: SacConfig,
                 rng: np.random.Generator, obs_low=None, obs_high=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        h = tuple(config.hidden)
        self.actor = Mlp.init((obs_dim, *h, 2 * act_dim), rng, head="gaussian", final_scale=0.01)
        self.q1 = Mlp.init((obs_dim + act_dim, *h, 1), rng)
        self.q2 = Mlp.init((obs_dim + act_dim, *h, 1), rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = Adam(config.lr, self.actor.flat.size)
        self.q1_opt = Adam(config.lr, self.q1.flat.size)
        self.q2_opt = Adam(config.lr, self.q2.flat.size)
        self.obs_low = np.zeros(obs_dim) if obs_low is None else np.asarray(obs_low, float)
        span = np.ones(obs_dim) if obs_high is None else np.asarray(obs_high, float) - self.obs_low
        self.obs_scale = 1.0 / span
        self.updates = 0
        self.last_info: dict = {}

    def networks(self) -> dict[str, tuple[Mlp, object]]:
        return {"actor": (self.actor, self.actor_opt), "q1": (self.q1, self.q1_opt),
                "q2": (self.q2, self.q2_opt), "q1_target": (self.q1_target, None),
                "q2_target": (self.q2_target, None)}

    def observe(self, states):
        return (np.asarray(states, dtype=np.float64) - self.obs_low) * self.obs_scale

    def act(self, states, deterministic: bool, rng: np.random.Generator | None = None):
        """Actions for one state ``(4,)`` or a batch ``(n, 4)``."""
        raw = self.actor.raw(self.observe(states))
        mean, log_std, _ = split_gaussian(raw)
        if deterministic:
            return np.tanh(mean)
        return np.tanh(mean + np.exp(log_std) * rng.standard_normal(mean.shape))

    def update(self, batch: dict, rng: np.random.Generator) -> tuple[float, float]:
        n = batch["r"].shape[0]
        if n == 0:
            raise ValueError("empty batch")
        cfg = self.config
        obs = self.observe(batch["s"])
        obs2 = self.observe(batch["s2"])

        raw2 = self.actor.raw(obs2)
        mean2, log_std2, _ = split_gaussian(raw2)
        a2, logp2, _ = squash_sample(mean2, log_std2, rng.standard_normal(mean2.shape))
        x2 = np.concatenate([obs2, a2], axis=1)
        q1t = self.q1_target.raw(x2)[:, 0]
        q2t = self.q2_target.raw(x2)[:, 0]
        entropy_term = logp2 + (self.act_dim * LOG_2 if cfg.uniform_prior else 0.0)
        soft_next = np.minimum(q1t, q2t) - cfg.alpha * entropy_term
        y = cfg.reward_scale * batch["r"] + cfg.gamma * (1.0 - batch["done"]) * soft_next

        x = np.concatenate([obs, batch["a"]], axis=1)
        l1, g1, _ = critic_loss_and_grad(self.q1, x, y)
        l2, g2, _ = critic_loss_and_grad(self.q2, x, y)
        optimizer_step(self.q1_opt, self.q1, g1)
        optimizer_step(self.q2_opt, self.q2, g2)

        noise = rng.standard_normal((n, self.act_dim))
        actor_loss, ga = actor_loss_and_grad(self.actor, self.q1, self.q2, obs, noise, cfg.alpha)
        optimizer_step(self.actor_opt, self.actor, ga)

        polyak_update(self.q1_target, self.q1, cfg.tau)
        polyak_update(self.q2_target, self.q2, cfg.tau)
        self.updates += 1
        self.last_info = {"target": y, "q1_target": q1t, "q2_target": q2t, "logp_next": logp2}
        return l1 + l2, actor_loss


def select_action(agent: SacAgent, state, mode: str, rng: np.random.Generator | None = None):
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    return agent.act(state, mode == "deterministic", rng)


def sac_update(agent: SacAgent, batch: dict, rng: np.random.Generator):
    """One critic step, one actor step and one Polyak step; returns ``(critic_loss, actor_loss)``."""
    return agent.update(batch, rng)
