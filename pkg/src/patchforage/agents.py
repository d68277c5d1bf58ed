"""Foraging agents.

Every foraging agent shares the same body: a navigation controller that
carries it from patch to patch and parks it just inside the edge it came in
through, so that a leave decision takes effect on the very next step. The
agents differ only in the stay/leave rule:

``threshold``
    leave once the patch reward drops below a fixed level ``theta``.
``mvt_learner``
    leave once the patch reward drops below a running estimate of the
    environment's reward per step.
``accumulator``
    integrate the gap between that estimate and the patch reward into a
    decision variable and leave when it reaches a threshold.
``planner``
    leave after the number of in-patch steps prescribed by the discounted
    solver for the agent's own measured travel time.

Each exposes ``state_vector()`` = ``STATE_FIELDS`` for the dynamics analyses.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .env import NOOP, Action, patch_at
from .errors import ConfigError
from .optimal import HORIZON, discounted_mvt_leave_step

KINDS = ("threshold", "mvt_learner", "accumulator", "planner")
STATE_FIELDS = ("dv", "rate_estimate", "last_reward", "forage", "patch_level")
DV, RATE, LAST_REWARD, FORAGE, PATCH_LEVEL = range(len(STATE_FIELDS))

FORAGE_MODE, TRAVEL_MODE = "forage", "travel"

ALIGNED = 0.3  # rad; bearing error below which navigation drives at full forward
HOLD_MARGIN = 0.02  # m inside the patch edge; less than one step of full thrust
HOLD_GAIN = 0.5


@dataclass(frozen=True)
class AgentParams:
    kind: str = "mvt_learner"
    theta: float | None = None
    ema_alpha: float = 1.0 / 500.0
    rate_init: float = 0.01
    accum_gain: float = 1000.0
    accum_noise_sd: float = 1.0
    accum_threshold: float = 1.0
    accum_leak: float = 0.3
    accum_drift_sd: float = 0.001
    accum_floor: float | None = None
    accum_absorbing: bool = False  # pin dv to the bound at the decision (first-passage idealization)
    gamma: float = 1.0
    tau_init: int = 50
    horizon: int = HORIZON
    seed: int = 0
    name: str | None = None

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown agent kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "threshold" and self.theta is None:
            raise ConfigError("threshold agent needs theta")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 < self.ema_alpha <= 1:
            raise ConfigError("ema_alpha must lie in (0, 1]")
        if self.accum_noise_sd < 0 or self.accum_drift_sd < 0:
            raise ConfigError("accumulator noise levels must be >= 0")
        if not 0 <= self.accum_leak <= 1:
            raise ConfigError("accum_leak must lie in [0, 1]")
        if self.tau_init < 0:
            raise ConfigError("tau_init must be >= 0")
        return self

    @property
    def label(self):
        if self.name:
            return self.name
        detail = {
            "threshold": f"theta={self.theta}",
            "planner": f"gamma={self.gamma}",
        }.get(self.kind, f"alpha={self.ema_alpha:g}")
        return f"{self.kind}[{detail}]#{self.seed}"

    def to_dict(self):
        data = asdict(self)
        data["name"] = self.label
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown agent keys: {sorted(unknown)}")
        return cls(**data).validate()


# -- pure decision rules -----------------------------------------------------


def threshold_decide(current_patch_reward, theta):
    """``"leave"`` when the patch pays less than ``theta``, otherwise ``"stay"``."""
    return "leave" if current_patch_reward < theta else "stay"


def ema_update(rate, reward, alpha):
    return (1.0 - alpha) * rate + alpha * reward


def accumulator_update(dv, current_patch_reward, rate, params, noise=0.0, drift_offset=0.0):
    """One step of evidence for leaving: drift is the rate estimate minus the patch reward.

    ``drift_offset`` is the per-encounter shift of the rate reference
    (across-trial drift variability).
    """
    dv = (1.0 - params.accum_leak) * dv
    dv += params.accum_gain * (rate + drift_offset - current_patch_reward) + noise
    if params.accum_floor is not None:
        dv = max(params.accum_floor, dv)
    return dv


# -- locomotion --------------------------------------------------------------


def _bearing_error(position, heading, target):
    bearing = math.atan2(target[1] - position[1], target[0] - position[0])
    return math.remainder(bearing - heading, math.tau)


def navigate(position, heading, target_center, max_turn=0.2):
    """Turn toward the target and drive forward once roughly facing it."""
    err = _bearing_error(position, heading, target_center)
    rotate = max(-1.0, min(1.0, err / max_turn))
    forward = 1.0 if abs(err) < ALIGNED else max(0.0, math.cos(err))
    return Action(forward, 0.0, rotate, 0.0, 0.0)


def _thrust(wx, wy, heading):
    """World-frame thrust request to (forward, strafe), each clipped to [-1, 1]."""
    hx, hy = math.cos(heading), math.sin(heading)
    f = wx * hx + wy * hy
    s = -wx * hy + wy * hx
    return max(-1.0, min(1.0, f)), max(-1.0, min(1.0, s))


def hold(position, velocity, heading, point, motion):
    """Drive to ``point`` and stop there, without turning."""
    ex, ey = point[0] - position[0], point[1] - position[1]
    wx, wy = HOLD_GAIN * ex, HOLD_GAIN * ey
    norm = math.hypot(wx, wy)
    if norm > motion.max_speed:
        wx, wy = wx * motion.max_speed / norm, wy * motion.max_speed / norm
    ax = (wx - motion.inertia * velocity[0]) / motion.gain
    ay = (wy - motion.inertia * velocity[1]) / motion.gain
    f, s = _thrust(ax, ay, heading)
    return Action(f, s, 0.0, 0.0, 0.0)


def bolt(position, heading, away_from):
    """Full thrust directly away from ``away_from`` (used to leave a patch)."""
    dx, dy = position[0] - away_from[0], position[1] - away_from[1]
    norm = math.hypot(dx, dy) or 1.0
    f, s = _thrust(dx / norm, dy / norm, heading)
    scale = max(abs(f), abs(s)) or 1.0
    return Action(f / scale, s / scale, 0.0, 0.0, 0.0)


# -- agents ------------------------------------------------------------------


class Forager:
    """Patch-to-patch forager with a pluggable stay/leave rule."""

    def __init__(self, params):
        self.params = params.validate()
        self.config = None

    def reset(self, config, seed):
        p = self.params
        self.config = config
        self.rng = np.random.default_rng([p.seed, seed])
        self.noise = p.accum_noise_sd * self.rng.standard_normal(config.episode_steps + 1)
        self.t = 0
        self.mode = TRAVEL_MODE
        self.target = int(self.rng.integers(2))
        self.dv = 0.0
        self.drift_offset = 0.0
        self.rate = p.rate_init
        self.last_reward = 0.0
        self.level = 0.0
        self.visit_steps = 0
        self.hold_point = None
        self.travel_steps = 0
        self.travel_history = []
        self.has_left = False
        self.planned_leave = None
        self.decisions = []

    # the planner's view of its environment
    def travel_estimate(self):
        if not self.travel_history:
            return self.params.tau_init
        return int(math.floor(sum(self.travel_history) / len(self.travel_history) + 0.5))

    def _plan(self):
        p = self.params
        solution = discounted_mvt_leave_step(
            self.travel_estimate(), p.gamma, p.horizon, self.config.n0, self.config.lam
        )
        return solution.leave_step

    def _wants_to_leave(self, patch_reward):
        p = self.params
        if p.kind == "threshold":
            return threshold_decide(patch_reward, p.theta) == "leave"
        if p.kind == "mvt_learner":
            return threshold_decide(patch_reward, self.rate) == "leave"
        if p.kind == "accumulator":
            return self.dv >= p.accum_threshold
        return self.visit_steps >= self.planned_leave

    def _accumulate(self):
        self.dv = accumulator_update(
            self.dv,
            self.level * self.config.n0,
            self.rate,
            self.params,
            self.noise[min(self.t, len(self.noise) - 1)],
            self.drift_offset,
        )

    def observe(self, state, observation, reward):
        p = self.params
        self.t = state.step
        self.last_reward = reward
        self.rate = ema_update(self.rate, reward, p.ema_alpha)
        level = observation.nearest_patch_level()
        self.level = 0.0 if level is None else level

        if self.mode == TRAVEL_MODE:
            if state.inside is None and self.has_left:
                self.travel_steps += 1
            if state.inside != self.target:
                return
            # patch entry
            if self.has_left:
                self.travel_history.append(self.travel_steps)
            self.travel_steps = 0
            self.mode = FORAGE_MODE
            self.dv = 0.0
            self.visit_steps = 1
            cx, cy = self.config.patch_centers[self.target]
            dx, dy = state.position[0] - cx, state.position[1] - cy
            norm = math.hypot(dx, dy) or 1.0
            reach = self.config.patch_radius - HOLD_MARGIN
            self.hold_point = (cx + reach * dx / norm, cy + reach * dy / norm)
            if p.kind == "planner":
                self.planned_leave = self._plan()
            if p.kind == "accumulator":
                self.drift_offset = p.accum_drift_sd * self.rng.standard_normal()
                self._accumulate()
        else:
            if state.inside != self.target:
                return
            self.visit_steps += 1
            if p.kind == "accumulator":
                self._accumulate()

        if self._wants_to_leave(self.level * self.config.n0):
            self.decisions.append((state.step, self.visit_steps))
            if p.kind == "accumulator" and p.accum_absorbing:
                self.dv = p.accum_threshold
            self.mode = TRAVEL_MODE
            self.target = 1 - self.target
            self.has_left = True

    def act(self, state):
        motion = self.config.motion
        if self.mode == FORAGE_MODE:
            return hold(state.position, state.velocity, state.heading, self.hold_point, motion)
        target = self.config.patch_centers[self.target]
        here = patch_at(state.position, self.config)
        if here is not None and here != self.target:
            action = bolt(state.position, state.heading, self.config.patch_centers[here])
            turn = navigate(state.position, state.heading, target, motion.max_turn).rotate
            return action._replace(rotate=turn)
        return navigate(state.position, state.heading, target, motion.max_turn)

    def state_vector(self):
        return (
            self.dv,
            self.rate,
            self.last_reward,
            1.0 if self.mode == FORAGE_MODE else 0.0,
            self.level,
        )


class RandomAgent:
    """Uniform random actions; the chance-level control."""

    def __init__(self, seed=0):
        self.seed = seed

    def reset(self, config, seed):
        self.rng = np.random.default_rng([self.seed, seed])

    def act(self, state):
        return Action(*self.rng.uniform(-1.0, 1.0, size=5))

    def observe(self, state, observation, reward):
        pass

    def state_vector(self):
        return None


class IdleAgent:
    """Never moves."""

    def reset(self, config, seed):
        pass

    def act(self, state):
        return NOOP

    def observe(self, state, observation, reward):
        pass

    def state_vector(self):
        return None


def make_agent(params):
    """Build an agent from ``AgentParams`` or a plain dict (``kind`` may be random/idle)."""
    if isinstance(params, dict):
        kind = params.get("kind")
        if kind == "random":
            return RandomAgent(params.get("seed", 0))
        if kind == "idle":
            return IdleAgent()
        params = AgentParams.from_dict(params)
    return Forager(params)


def agent_info(params):
    if isinstance(params, dict):
        info = dict(params)
        info.setdefault("name", f"{info.get('kind')}#{info.get('seed', 0)}")
        return info
    return params.to_dict()
