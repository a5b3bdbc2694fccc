"""Reset-free RL with a self-supervised success discriminator gating start states."""
from .maze import (MazeSpec, env_step, load_maze_spec, load_named_maze, normalize_state,
                   sample_uniform_valid)
from .orchestrator import RunConfig, RunMetrics, Trainer, train

__all__ = [
    "MazeSpec", "RunConfig", "RunMetrics", "Trainer", "env_step", "load_maze_spec",
    "load_named_maze", "normalize_state", "sample_uniform_valid", "train",
]
__version__ = "0.1.0"
