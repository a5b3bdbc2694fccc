"""Reset-free training loop and the three baseline training modes.

``ours``      reset phase with the success-probability gate, then forward phase
``r3l``       same loop, reset phase always runs its full length (no gate)
``reset-rl``  every episode starts from the state farthest from the goal
``oracle-rl`` every episode starts from a uniformly sampled valid state
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import maze as mz
from .discriminator import (Discriminator, GateThresholds, balanced_sample,
                            discriminator_update, estimate, gate_allows, prior_corrected)
from .evaluation import CurriculumSnapshot, evaluate, export_curriculum, write_csv
from .rnd import RndConfig, RndModel, intrinsic_reward, rnd_update
from .sac import ReplayBuffer, SacAgent, SacConfig, Transition, relabel_rollout

log = logging.getLogger(__name__)

ALGORITHMS = ("ours", "reset-rl", "oracle-rl", "r3l")

PROFILES = {
    "paper": {"hidden": 512, "rnd_hidden": 256, "batch_size": 256, "reward_scale": 1.0,
              "reset_reward_scale": 1.0, "uniform_prior": False, "prior_correction": False},
    "test": {"hidden": 64, "rnd_hidden": 64, "batch_size": 64, "reward_scale": 10.0,
             "reset_reward_scale": 10.0, "uniform_prior": True, "prior_correction": True},
}


@dataclass
class RunConfig:
    maze: str = "1way"
    algorithm: str = "ours"
    seed: int = 0
    profile: str = "test"
    total_env_steps: int = 100_000
    t_reset: int = 0  # 0: take the maze file's cap
    t_forward: int = 0
    gamma: float = 0.99
    alpha: float = 0.4
    tau: float = 0.005
    lr: float = 1e-4
    lr_reset: float = 3e-5
    hidden: int | None = None  # None: take the profile's value (all such fields)
    layers: int = 2
    rnd_hidden: int | None = None
    rnd_embedding: int = 64
    batch_size: int | None = None
    buffer_capacity: int = 5_000_000
    learning_starts: int = 0  # 0: batch_size
    lambda_low: float = 0.3
    lambda_high: float = 0.7
    gate_warmup_episodes: int = 0
    reward_scale: float | None = None
    reset_reward_scale: float | None = None
    uniform_prior: bool | None = None
    prior_correction: bool | None = None  # gate reads the estimate under the data's label prior
    normalize_intrinsic: bool = True
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    manual_reset_to: str = "uniform"  # where ours/r3l land after a failed episode
    eval_interval: int = 10_000
    eval_episodes: int = 100
    curriculum_fractions: tuple[float, ...] = (0.1, 0.75)
    curriculum_samples: int = 1000
    save_buffers: bool = False

    def resolved(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        prof = PROFILES[self.profile]
        cfg = dataclasses.replace(self)
        for key, value in prof.items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, value)
        spec = mz.load_named_maze(cfg.maze)
        if not cfg.t_reset:
            cfg.t_reset = spec.max_episode_steps_reset
        if not cfg.t_forward:
            cfg.t_forward = spec.max_episode_steps_forward
        if not cfg.learning_starts:
            cfg.learning_starts = cfg.batch_size
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        for name in ("total_env_steps", "t_reset", "t_forward", "eval_interval",
                     "eval_episodes", "batch_size", "hidden", "rnd_hidden", "layers",
                     "reward_scale", "reset_reward_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size % 2:
            raise ValueError("batch_size must be even (balanced discriminator batches)")
        GateThresholds(self.lambda_low, self.lambda_high)
        if self.manual_reset_to not in ("uniform", "farthest"):
            raise ValueError("manual_reset_to must be 'uniform' or 'farthest'")
        if self.algorithm != "ours" and self.gate_warmup_episodes:
            raise ValueError("gate_warmup_episodes only applies to algorithm 'ours'")
        if not all(0.0 < f <= 1.0 for f in self.curriculum_fractions):
            raise ValueError("curriculum_fractions must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["curriculum_fractions"] = list(self.curriculum_fractions)
        return d


def _coerce(field_type, text: str):
    t = str(field_type)
    if "bool" in t:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if "tuple" in t:
        return tuple(float(v) for v in text.replace(",", " ").split())
    if "int" in t:
        return int(text)
    if "float" in t:
        return float(text)
    return text


def config_from_mapping(values: dict) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, value in values.items():
        key = key.replace("-", "_")
        if key == "algo":
            key = "algorithm"
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(fields[key].type, value) if isinstance(value, str) else value
    return RunConfig(**kwargs)


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> RunConfig:
    return config_from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

METRIC_FIELDS = (
    "env_steps", "episodes", "manual_resets", "success_rate", "average_steps",
    "forward_critic_loss", "forward_actor_loss", "reset_critic_loss", "reset_actor_loss",
    "rnd_loss", "discriminator_loss", "mean_reset_steps", "gate_consultations",
    "gate_aborts", "training_successes",
)

EPISODE_FIELDS = (
    "episode", "env_steps", "reset_steps", "aborted", "gate_probability", "forward_steps",
    "success", "manual_reset", "start_x", "start_y", "start_vx", "start_vy",
)


@dataclass
class ResetPhaseResult:
    start_state: np.ndarray
    steps_used: int  # reset-loop iterations consumed, including the one whose gate check fired
    aborted: bool
    env_steps: int = 0  # environment steps actually executed (steps_used - 1 on abort)
    gate_probability: float = math.nan


@dataclass
class ForwardPhaseResult:
    rollout: list
    success: bool
    final_state: np.ndarray


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    snapshots: list[CurriculumSnapshot] = field(default_factory=list)
    config: RunConfig | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def final_success_rate(self) -> float:
        return self.rows[-1]["success_rate"] if self.rows else math.nan

    def convergence_row(self) -> dict:
        """First eval row with SR >= 0.95 * final SR."""
        final = self.final_success_rate()
        for row in self.rows:
            if row["success_rate"] >= 0.95 * final:
                return row
        return self.rows[-1]

    def manual_resets_at_convergence(self) -> int:
        return int(self.convergence_row()["manual_resets"])

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        write_csv(out / "metrics.csv", METRIC_FIELDS,
                  ([r[k] for k in METRIC_FIELDS] for r in self.rows))
        write_csv(out / "episodes.csv", EPISODE_FIELDS,
                  ([e[k] for k in EPISODE_FIELDS] for e in self.episodes))
        for snap in self.snapshots:
            snap.write(out / f"curriculum_{snap.training_step:09d}.csv")


class _Mean:
    def __init__(self):
        self.total = 0.0
        self.n = 0

    def add(self, x: float) -> None:
        self.total += x
        self.n += 1

    def pop(self) -> float:
        v = self.total / self.n if self.n else math.nan
        self.total, self.n = 0.0, 0
        return v


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    """Holds every learner, buffer and counter of one run."""

    def __init__(self, config: RunConfig, spec: mz.MazeSpec | None = None):
        cfg = config.resolved()
        self.cfg = cfg
        self.spec = spec if spec is not None else mz.load_named_maze(cfg.maze)
        streams = np.random.SeedSequence(cfg.seed).spawn(8)
        (init_rng, self.env_rng, self.fwd_rng, self.reset_rng, self.disc_rng,
         self.buf_rng, self.eval_seed, self.curr_seed) = streams
        init_rng = np.random.default_rng(init_rng)
        for name in ("env_rng", "fwd_rng", "reset_rng", "disc_rng", "buf_rng"):
            setattr(self, name, np.random.default_rng(getattr(self, name)))

        low, high = mz.state_bounds(self.spec)
        hidden = (cfg.hidden,) * cfg.layers
        fwd_cfg = SacConfig(hidden, cfg.lr, cfg.gamma, cfg.alpha, cfg.tau, cfg.batch_size,
                            cfg.reward_scale, cfg.uniform_prior)
        self.forward_agent = SacAgent(4, 2, fwd_cfg, init_rng, low, high)
        self.forward_buffer = ReplayBuffer(cfg.buffer_capacity, "forward")
        self.thresholds = GateThresholds(cfg.lambda_low, cfg.lambda_high)

        self.reset_agent = self.rnd = self.reset_buffer = self.disc = None
        if cfg.algorithm in ("ours", "r3l"):
            reset_cfg = SacConfig(hidden, cfg.lr_reset, cfg.gamma, cfg.alpha, cfg.tau,
                                  cfg.batch_size, cfg.reset_reward_scale, cfg.uniform_prior)
            self.reset_agent = SacAgent(4, 2, reset_cfg, init_rng, low, high)
            self.reset_buffer = ReplayBuffer(cfg.buffer_capacity, "reset")
            rnd_cfg = RndConfig((cfg.rnd_hidden,) * cfg.layers, cfg.rnd_embedding, cfg.lr,
                                cfg.normalize_intrinsic)
            self.rnd = RndModel(4, rnd_cfg, init_rng, low, high)
        if cfg.algorithm == "ours":
            self.disc = Discriminator(4, 2, hidden, cfg.lr, init_rng, low, high,
                                      rho=cfg.rms_decay, eps=cfg.rms_eps)

        self.far_state = mz.farthest_state(self.spec)
        self.goal_norm = mz.normalize_state(self.spec, mz.make_state(self.spec.goal_center))[:2]
        self.env_steps = 0
        self.reset_steps = 0
        self.forward_steps = 0
        self.episodes = 0
        self.manual_resets = 0
        self.training_successes = 0
        self.gate_consultations = 0
        self.gate_aborts = 0
        self.first_success_step: int | None = None
        self.metrics = RunMetrics(config=cfg)
        self._means = {k: _Mean() for k in METRIC_FIELDS[5:12]}
        self._evals_done = 0
        fracs = sorted(set(cfg.curriculum_fractions)) if self.disc is not None else []
        self._snapshot_due = [max(1, int(round(f * cfg.total_env_steps))) for f in fracs]

    # -- bookkeeping -------------------------------------------------------

    def _after_env_step(self) -> None:
        self.env_steps += 1
        if self.env_steps % self.cfg.eval_interval == 0 or self.env_steps == self.cfg.total_env_steps:
            self._record_eval()
        if self._snapshot_due and self.env_steps >= self._snapshot_due[0] \
                and self.first_success_step is not None:
            self._snapshot_due.pop(0)
            self.take_snapshot()

    def _budget_left(self) -> bool:
        return self.env_steps < self.cfg.total_env_steps

    def _record_eval(self) -> None:
        if self.metrics.rows and self.metrics.rows[-1]["env_steps"] == self.env_steps:
            return
        rng = np.random.default_rng([self.cfg.seed, 1, self._evals_done])
        self._evals_done += 1
        report = evaluate(self.forward_agent, self.spec, self.cfg.eval_episodes, rng,
                          self.cfg.t_forward)
        row = {"env_steps": self.env_steps, "episodes": self.episodes,
               "manual_resets": self.manual_resets, "success_rate": report.success_rate,
               "average_steps": report.average_steps,
               "gate_consultations": self.gate_consultations, "gate_aborts": self.gate_aborts,
               "training_successes": self.training_successes}
        for key, m in self._means.items():
            row[key] = m.pop()
        self.metrics.rows.append(row)
        log.info("step %d episodes %d MR %d SR %.2f AS %.1f", self.env_steps, self.episodes,
                 self.manual_resets, report.success_rate, report.average_steps)

    def take_snapshot(self) -> CurriculumSnapshot:
        rng = np.random.default_rng([self.cfg.seed, 2, self.env_steps])
        snap = export_curriculum(self.disc, self.reset_agent, self.spec,
                                 self.cfg.curriculum_samples, rng, self.env_steps,
                                 self.thresholds, prior=self.label_prior())
        self.metrics.snapshots.append(snap)
        return snap

    def _update_discriminator(self) -> None:
        """One step on a balanced batch of finished episodes; runs after every env step."""
        if self.disc is None:
            return
        lb = balanced_sample(self.forward_buffer, self.cfg.batch_size, self.disc_rng, self.disc)
        if lb is not None:
            self._means["discriminator_loss"].add(discriminator_update(self.disc, lb))

    def label_prior(self) -> tuple[int, int] | None:
        if not self.cfg.prior_correction:
            return None
        return len(self.forward_buffer.pos_pool), len(self.forward_buffer.neg_pool)

    def gate_probability(self, state, action) -> float:
        p = estimate(self.disc, state, action)
        prior = self.label_prior()
        return p if prior is None else prior_corrected(p, *prior)

    # -- phases ------------------------------------------------------------

    def run_reset_phase(self, state: np.ndarray) -> ResetPhaseResult:
        cfg = self.cfg
        use_gate = cfg.algorithm == "ours" and self.episodes >= cfg.gate_warmup_episodes
        steps = 0
        for t in range(1, cfg.t_reset + 1):
            if not self._budget_left():
                break
            a = self.reset_agent.act(state, False, self.reset_rng)
            if use_gate:
                self.gate_consultations += 1
                p = self.gate_probability(state, a)
                if gate_allows(self.thresholds, p):
                    self.gate_aborts += 1
                    return ResetPhaseResult(state, t, True, steps, p)
            s2, _, _ = mz.env_step(self.spec, state, a)
            r_hat = float(intrinsic_reward(self.rnd, s2))
            self.reset_buffer.add(state, a, r_hat, s2, False)
            steps += 1
            self.reset_steps += 1
            self._after_env_step()
            if len(self.reset_buffer) >= cfg.learning_starts:
                batch = self.reset_buffer.sample(cfg.batch_size, self.buf_rng)
                lc, la = self.reset_agent.update(batch, self.reset_rng)
                self._means["reset_critic_loss"].add(lc)
                self._means["reset_actor_loss"].add(la)
                self._means["rnd_loss"].add(rnd_update(self.rnd, batch["s2"]))
            self._update_discriminator()
            state = s2
        return ResetPhaseResult(state, steps, False, steps)

    def run_forward_phase(self, state: np.ndarray) -> ForwardPhaseResult:
        cfg = self.cfg
        episode = self.episodes
        rollout: list[Transition] = []
        slots = []
        reached = False
        for _ in range(cfg.t_forward):
            if not self._budget_left():
                break
            a = self.forward_agent.act(state, False, self.fwd_rng)
            s2, r, reached = mz.env_step(self.spec, state, a)
            c = int(reached)
            slots.append(self.forward_buffer.add(state, a, r, s2, reached, c, episode))
            rollout.append(Transition(state, a, r, s2, reached, c, episode))
            self.forward_steps += 1
            self._after_env_step()
            if len(self.forward_buffer) >= cfg.learning_starts:
                batch = self.forward_buffer.sample(cfg.batch_size, self.buf_rng)
                lc, la = self.forward_agent.update(batch, self.fwd_rng)
                self._means["forward_critic_loss"].add(lc)
                self._means["forward_actor_loss"].add(la)
            self._update_discriminator()
            state = s2
            if reached:
                break
        if rollout:
            rollout = relabel_rollout(rollout)
            self.forward_buffer.finish_episode(slots, int(reached), episode)
        return ForwardPhaseResult(rollout, bool(reached), state)

    # -- main loop ---------------------------------------------------------

    def _manual_reset_destination(self) -> np.ndarray:
        if self.cfg.manual_reset_to == "farthest":
            return self.far_state.copy()
        return mz.sample_uniform_valid(self.spec, self.env_rng)

    def train(self) -> RunMetrics:
        cfg = self.cfg
        algo = cfg.algorithm
        state = mz.sample_uniform_valid(self.spec, self.env_rng)
        while self._budget_left():
            manual = False
            reset_res = None
            if algo in ("ours", "r3l"):
                reset_res = self.run_reset_phase(state)
                state = reset_res.start_state
                if not self._budget_left():
                    break
            else:
                state = self.far_state.copy() if algo == "reset-rl" else \
                    mz.sample_uniform_valid(self.spec, self.env_rng)
                self.manual_resets += 1
                manual = True
            if reset_res is not None and reset_res.aborted:
                assert gate_allows(self.thresholds, reset_res.gate_probability)
            start = state.copy()
            fwd = self.run_forward_phase(state)
            state = fwd.final_state
            self.episodes += 1
            if fwd.success:
                self.training_successes += 1
                if self.first_success_step is None:
                    self.first_success_step = self.env_steps
            elif algo in ("ours", "r3l") and fwd.rollout and self._budget_left():
                self.manual_resets += 1
                manual = True
                state = self._manual_reset_destination()
            if reset_res is not None:
                self._means["mean_reset_steps"].add(reset_res.env_steps)
            self.metrics.episodes.append({
                "episode": self.episodes - 1, "env_steps": self.env_steps,
                "reset_steps": reset_res.env_steps if reset_res else 0,
                "aborted": bool(reset_res and reset_res.aborted),
                "gate_probability": reset_res.gate_probability if reset_res else math.nan,
                "forward_steps": len(fwd.rollout), "success": fwd.success,
                "manual_reset": manual, "start_x": start[0], "start_y": start[1],
                "start_vx": start[2], "start_vy": start[3]})
        if not self.metrics.rows or self.metrics.rows[-1]["env_steps"] != self.env_steps:
            self._record_eval()
        assert self.env_steps == self.reset_steps + self.forward_steps
        return self.metrics


def train(config: RunConfig, out_dir=None) -> tuple[RunMetrics, Trainer]:
    """Run one configuration to completion; writes outputs when ``out_dir`` is given."""
    from .checkpoint import save_trainer

    trainer = Trainer(config)
    metrics = trainer.train()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics.write(out)
        save_trainer(trainer, out / "checkpoints")
        run_info = {"config": trainer.cfg.to_dict(), "seed": trainer.cfg.seed,
                    "git_describe": git_describe()}
        (out / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return metrics, trainer


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() or "unknown"
