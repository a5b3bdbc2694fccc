"""Evaluation, curriculum snapshots and the Monte Carlo success-probability oracle."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import maze as mz
from .discriminator import Discriminator, GateThresholds, estimate, prior_corrected

FLOAT_FMT = "{:.17g}"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return FLOAT_FMT.format(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def rollout_batch(policy, spec: mz.MazeSpec, starts: np.ndarray, horizon: int):
    """Run ``policy(states) -> actions`` from every start until goal or ``horizon``.

    A start already inside the goal region counts as a success after 0 steps.
    Returns ``(success, steps)`` arrays.
    """
    states = np.array(starts, dtype=np.float64, copy=True)
    n = states.shape[0]
    success = mz.in_goal_many(spec, states)
    steps = np.zeros(n, dtype=np.int64)
    active = ~success
    for _ in range(horizon):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        acts = policy(states[idx])
        nxt, rew = mz.step_many(spec, states[idx], acts)
        states[idx] = nxt
        steps[idx] += 1
        hit = rew > 0.0
        success[idx[hit]] = True
        active[idx[hit]] = False
    return success, steps


@dataclass
class EvalReport:
    n_episodes: int
    success_rate: float
    average_steps: float
    starts: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    success: np.ndarray = field(repr=False)


def evaluate(agent, spec: mz.MazeSpec, n: int, rng: np.random.Generator,
             horizon: int | None = None, starts: np.ndarray | None = None) -> EvalReport:
    """Deterministic-mode episodes from uniform valid starts.

    Failed episodes count ``horizon`` steps toward the average.
    """
    if n < 1:
        raise ValueError("need at least one episode")
    horizon = spec.max_episode_steps_forward if horizon is None else horizon
    if starts is None:
        starts = mz.sample_uniform_valid_many(spec, n, rng)
    success, steps = rollout_batch(lambda s: agent.act(s, True), spec, starts, horizon)
    steps = np.where(success, steps, horizon)
    return EvalReport(n, float(success.sum()) / n, float(steps.mean()), starts, steps, success)


@dataclass
class CurriculumSnapshot:
    training_step: int
    states: np.ndarray  # normalised
    actions: np.ndarray
    probabilities: np.ndarray
    allowed: np.ndarray

    HEADER = ("training_step", "x", "y", "vx", "vy", "ax", "ay", "probability", "allowed")

    def rows(self):
        for s, a, p, ok in zip(self.states, self.actions, self.probabilities, self.allowed):
            yield (self.training_step, *s, *a, p, ok)

    def write(self, path) -> None:
        write_csv(path, self.HEADER, self.rows())

    def mean_goal_distance(self, goal_norm: np.ndarray) -> float:
        """Mean normalised Euclidean goal distance of the gate-allowed states (nan if none)."""
        pts = self.states[self.allowed, :2]
        if len(pts) == 0:
            return math.nan
        return float(np.mean(np.hypot(pts[:, 0] - goal_norm[0], pts[:, 1] - goal_norm[1])))


def random_policy_states(spec: mz.MazeSpec, n_states: int, rng: np.random.Generator,
                         rollout_len: int = 20) -> np.ndarray:
    """States visited by uniform-random-action rollouts from uniform valid starts."""
    n_roll = math.ceil(n_states / rollout_len)
    states = mz.sample_uniform_valid_many(spec, n_roll, rng)
    seen = []
    for _ in range(rollout_len):
        states, _ = mz.step_many(spec, states, rng.uniform(-1.0, 1.0, size=(n_roll, 2)))
        seen.append(states)
    return np.stack(seen, axis=1).reshape(-1, 4)[:n_states]


def export_curriculum(disc: Discriminator, reset_agent, spec: mz.MazeSpec, n_states: int,
                      rng: np.random.Generator, training_step: int,
                      thresholds: GateThresholds = GateThresholds(),
                      rollout_len: int = 20, prior: tuple[int, int] | None = None
                      ) -> CurriculumSnapshot:
    """Gate probabilities on random-policy states; ``prior`` = (positives, negatives) to correct."""
    states = random_policy_states(spec, n_states, rng, rollout_len)
    actions = reset_agent.act(states, False, rng)
    probs = np.atleast_1d(estimate(disc, states, actions))
    if prior is not None:
        probs = prior_corrected(probs, *prior)
    allowed = (probs >= thresholds.low) & (probs <= thresholds.high)
    return CurriculumSnapshot(int(training_step), mz.normalize_state(spec, states),
                              actions, probs, allowed)


@dataclass
class OracleMap:
    points: np.ndarray  # (m, 2) positions
    fractions: np.ndarray
    rollouts: int
    estimates: np.ndarray | None = None

    def write(self, path) -> None:
        header = ["x", "y", "success_fraction"]
        cols = [self.points[:, 0], self.points[:, 1], self.fractions]
        if self.estimates is not None:
            header.append("estimate")
            cols.append(self.estimates)
        write_csv(path, header, zip(*cols))


def grid_points(spec: mz.MazeSpec, resolution: int) -> np.ndarray:
    """Cell-centred ``resolution x resolution`` lattice over the bounding box, free points only."""
    xs = (np.arange(resolution) + 0.5) * spec.width / resolution
    ys = (np.arange(resolution) + 0.5) * spec.height / resolution
    pts = [(x, y) for y in ys for x in xs if spec.is_free(x, y)]
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def monte_carlo_success_map(agent, spec: mz.MazeSpec, grid_resolution: int, k: int,
                            rng: np.random.Generator, horizon: int | None = None,
                            disc: Discriminator | None = None,
                            reset_agent=None) -> OracleMap:
    """Empirical success fraction of ``k`` stochastic rollouts from each free grid point.

    With ``disc`` and ``reset_agent`` given, also records the discriminator's
    estimate at each point for an action sampled from the reset policy.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    horizon = spec.max_episode_steps_forward if horizon is None else horizon
    pts = grid_points(spec, grid_resolution)
    starts = np.zeros((len(pts), 4))
    starts[:, :2] = pts
    tiled = np.repeat(starts, k, axis=0)
    success, _ = rollout_batch(lambda s: agent.act(s, False, rng), spec, tiled, horizon)
    fractions = success.reshape(len(pts), k).sum(axis=1) / k
    est = None
    if disc is not None and reset_agent is not None:
        actions = reset_agent.act(starts, False, rng)
        est = np.atleast_1d(estimate(disc, starts, actions))
    return OracleMap(pts, fractions, k, est)


def spearman(a, b) -> float:
    """Spearman rank correlation; nan when either side is constant."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    res = spearmanr(a, b)
    return float(res.statistic if hasattr(res, "statistic") else res.correlation)
