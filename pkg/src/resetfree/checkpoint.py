"""Agent checkpoints: one network file per net plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import maze as mz
from .discriminator import Discriminator
from .nn import load_network, save_network
from .orchestrator import RunConfig, config_from_mapping
from .rnd import RndConfig, RndModel, RunningStats
from .sac import SacAgent, SacConfig

MANIFEST = "manifest.json"


def _save_agent(agent: SacAgent, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, (net, opt) in agent.networks().items():
        save_network(directory / f"{name}.net", net, opt)


def _load_agent(directory: Path, config: SacConfig, low, high) -> SacAgent:
    agent = SacAgent(4, 2, config, np.random.default_rng(0), low, high)
    for name in agent.networks():
        net, opt = load_network(directory / f"{name}.net")
        setattr(agent, name, net)
        if opt is not None:
            setattr(agent, f"{name}_opt", opt)
    return agent


def save_trainer(trainer, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    cfg = trainer.cfg
    _save_agent(trainer.forward_agent, out / "forward")
    manifest = {"config": cfg.to_dict(), "env_steps": trainer.env_steps,
                "forward_updates": trainer.forward_agent.updates,
                "buffers": {"forward": trainer.forward_buffer.metadata()}}
    if trainer.reset_agent is not None:
        _save_agent(trainer.reset_agent, out / "reset")
        manifest["buffers"]["reset"] = trainer.reset_buffer.metadata()
        rnd = trainer.rnd
        save_network(out / "rnd_target.net", rnd.target)
        save_network(out / "rnd_predictor.net", rnd.predictor, rnd.opt)
        manifest["rnd"] = {
            "obs_mean": rnd.obs_stats.mean.tolist(), "obs_var": rnd.obs_stats.var.tolist(),
            "obs_count": rnd.obs_stats.count, "reward_var": rnd.reward_stats.var.tolist(),
            "reward_mean": rnd.reward_stats.mean.tolist(),
            "reward_count": rnd.reward_stats.count, "target_sha256": rnd.target_digest()}
    if trainer.disc is not None:
        save_network(out / "discriminator.net", trainer.disc.net, trainer.disc.opt)
    if cfg.save_buffers:
        for role, buf in (("forward", trainer.forward_buffer), ("reset", trainer.reset_buffer)):
            if buf is None:
                continue
            n = buf.size
            np.savez(out / f"buffer_{role}.npz", s=buf.s[:n], a=buf.a[:n], r=buf.r[:n],
                     s2=buf.s2[:n], done=buf.done[:n], c=buf.c[:n], episode=buf.episode[:n])
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")


class LoadedCheckpoint:
    """Read-only view of a saved run: maze, config and whichever learners exist."""

    def __init__(self, directory):
        root = Path(directory)
        if not (root / MANIFEST).exists() and (root / "checkpoints" / MANIFEST).exists():
            root = root / "checkpoints"
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
        self.manifest = manifest
        cfg_dict = dict(manifest["config"])
        cfg_dict["curriculum_fractions"] = tuple(cfg_dict["curriculum_fractions"])
        self.config: RunConfig = config_from_mapping(cfg_dict)
        cfg = self.config
        self.spec = mz.load_named_maze(cfg.maze)
        low, high = mz.state_bounds(self.spec)
        hidden = (cfg.hidden,) * cfg.layers
        self.forward_agent = _load_agent(
            root / "forward",
            SacConfig(hidden, cfg.lr, cfg.gamma, cfg.alpha, cfg.tau, cfg.batch_size,
                      cfg.reward_scale, cfg.uniform_prior), low, high)
        self.reset_agent = self.rnd = self.disc = None
        if (root / "reset").exists():
            self.reset_agent = _load_agent(
                root / "reset",
                SacConfig(hidden, cfg.lr_reset, cfg.gamma, cfg.alpha, cfg.tau, cfg.batch_size,
                          cfg.reset_reward_scale, cfg.uniform_prior), low, high)
            rnd = RndModel(4, RndConfig((cfg.rnd_hidden,) * cfg.layers, cfg.rnd_embedding,
                                        cfg.lr, cfg.normalize_intrinsic),
                           np.random.default_rng(0), low, high)
            rnd.target, _ = load_network(root / "rnd_target.net")
            rnd.predictor, rnd.opt = load_network(root / "rnd_predictor.net")
            meta = manifest["rnd"]
            rnd.obs_stats = RunningStats(np.array(meta["obs_mean"]), np.array(meta["obs_var"]),
                                         meta["obs_count"])
            rnd.reward_stats = RunningStats(np.array(meta["reward_mean"]),
                                            np.array(meta["reward_var"]), meta["reward_count"])
            self.rnd = rnd
        if (root / "discriminator.net").exists():
            disc = Discriminator(4, 2, hidden, cfg.lr, np.random.default_rng(0), low, high,
                                 rho=cfg.rms_decay, eps=cfg.rms_eps)
            disc.net, disc.opt = load_network(root / "discriminator.net")
            self.disc = disc


def load_checkpoint(directory) -> LoadedCheckpoint:
    return LoadedCheckpoint(directory)
