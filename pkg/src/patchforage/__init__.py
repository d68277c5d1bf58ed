"""Two-patch foraging environment, agents, optimal leaving-time solvers and analyses."""

from .agents import AgentParams, Forager, make_agent
from .env import EpisodeLog, WorldConfig, reset, run_episode, step
from .optimal import discounted_mvt_leave_step, mvt_leave_step

__all__ = [
    "AgentParams",
    "EpisodeLog",
    "Forager",
    "WorldConfig",
    "discounted_mvt_leave_step",
    "make_agent",
    "mvt_leave_step",
    "reset",
    "run_episode",
    "step",
]

__version__ = "0.1.0"
