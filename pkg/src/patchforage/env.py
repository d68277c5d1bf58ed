"""Planar two-patch foraging world.

The world is a square centred on the origin with two circular patches placed
symmetrically on the x axis. Each patch pays ``n0 * exp(-lam * n)`` per step
the agent stands inside it, where ``n`` counts rewarded steps since the patch
was last refreshed. Entering one patch refreshes the other.

Everything here is plain Python floats so an episode is bit-reproducible and
cheap enough to simulate thousands of times.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, asdict
from functools import lru_cache
from pathlib import Path
from typing import Iterator, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import ConfigError, EpisodeCompleteError, LogParseError

N0 = 1.0 / 30.0
DECAY = 0.01
EPISODE_STEPS = 3600

# ray object types, in one-hot order
PATCH, BOUNDARY, NOTHING = 0, 1, 2
OBJECT_TYPES = ("patch", "boundary", "none")


def patch_reward(n, n0=N0, lam=DECAY):
    """Reward paid by a patch that has been occupied for ``n`` steps."""
    return n0 * math.exp(-lam * n)


def patch_color(n, n0=N0, lam=DECAY):
    """RGB colour of a patch: white when fresh, fading to black."""
    level = patch_reward(n, n0, lam) / n0
    return (level, level, level)


# -- configuration -----------------------------------------------------------


def _reject_unknown(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class SensorConfig:
    rays: int = 8
    azimuth_min: float = -45.0
    azimuth_max: float = 45.0
    max_range: float = 128.0

    def validate(self):
        if self.rays < 1:
            raise ConfigError("sensor.rays must be >= 1")
        if not self.azimuth_min < self.azimuth_max:
            raise ConfigError("sensor.azimuth_min must be < sensor.azimuth_max")
        if not self.max_range > 0:
            raise ConfigError("sensor.max_range must be > 0")

    @classmethod
    def from_dict(cls, data):
        _reject_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class MotionConfig:
    max_speed: float = 0.15  # m/step
    max_turn: float = 0.2  # rad/step
    inertia: float = 0.8

    @property
    def gain(self):
        # thrust per unit command; steady-state speed under full thrust is max_speed
        return (1.0 - self.inertia) * self.max_speed

    def validate(self):
        if not self.max_speed > 0:
            raise ConfigError("motion.max_speed must be > 0")
        if not self.max_turn > 0:
            raise ConfigError("motion.max_turn must be > 0")
        if not 0.0 <= self.inertia < 1.0:
            raise ConfigError("motion.inertia must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data):
        _reject_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class WorldConfig:
    """Geometry, reward and timing of one foraging world.

    ``lam`` is serialised under the JSON key ``"lambda"``.
    """

    world_size: float = 32.0
    patch_radius: float = 2.0
    patch_distance: float = 8.0
    n0: float = N0
    lam: float = DECAY
    episode_steps: int = EPISODE_STEPS
    sensor: SensorConfig = field(default_factory=SensorConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)

    def validate(self):
        if not self.patch_radius > 0:
            raise ConfigError("patch_radius must be > 0")
        reach = self.patch_distance / 2 + self.patch_radius
        if not 0 < reach <= self.world_size / 2:
            raise ConfigError(
                f"patch outside bounds: patch_distance/2 + patch_radius = {reach} "
                f"must lie in (0, world_size/2 = {self.world_size / 2}]"
            )
        if not self.n0 > 0:
            raise ConfigError("n0 must be > 0")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if self.episode_steps < 1:
            raise ConfigError("episode_steps must be >= 1")
        self.sensor.validate()
        self.motion.validate()
        return self

    @property
    def patch_centers(self):
        half = self.patch_distance / 2
        return ((-half, 0.0), (half, 0.0))

    def to_dict(self):
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        _reject_unknown(cls, data)
        if "sensor" in data:
            data["sensor"] = SensorConfig.from_dict(data["sensor"])
        if "motion" in data:
            data["motion"] = MotionConfig.from_dict(data["motion"])
        try:
            config = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return config.validate()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- state, actions, observations --------------------------------------------


class Action(NamedTuple):
    """Five-dimensional continuous action. ``pitch`` and ``jump`` are ignored."""

    forward: float = 0.0
    strafe: float = 0.0
    rotate: float = 0.0
    pitch: float = 0.0
    jump: float = 0.0

    @classmethod
    def clamped(cls, *values):
        return cls(*(min(1.0, max(-1.0, float(v))) for v in values))


NOOP = Action()


@dataclass(frozen=True, slots=True)
class WorldState:
    step: int
    position: tuple[float, float]
    heading: float
    velocity: tuple[float, float]
    depletion: tuple[int, int]
    inside: int | None
    score: float


class RayHit(NamedTuple):
    kind: int
    color: tuple[float, float, float]
    distance: float  # normalised by max_range


@dataclass(frozen=True)
class Observation:
    rays: tuple[RayHit, ...]
    last_reward: float = 0.0
    last_action: Action = NOOP

    def vector(self):
        """Flatten to ``[one-hot(3), rgb(3), distance]`` per ray, then reward and action."""
        out = []
        for hit in self.rays:
            onehot = [0.0, 0.0, 0.0]
            onehot[hit.kind] = 1.0
            out.extend(onehot)
            out.extend(hit.color)
            out.append(hit.distance)
        out.append(self.last_reward)
        out.extend(self.last_action)
        return np.asarray(out, dtype=float)

    def nearest_patch_level(self):
        """Colour level of the closest patch seen by any ray, or None."""
        best = None
        for hit in self.rays:
            if hit.kind == PATCH and (best is None or hit.distance < best.distance):
                best = hit
        return None if best is None else best.color[0]


@lru_cache(maxsize=32)
def _ray_offsets(sensor):
    if sensor.rays == 1:
        return (math.radians(0.5 * (sensor.azimuth_min + sensor.azimuth_max)),)
    span = sensor.azimuth_max - sensor.azimuth_min
    return tuple(
        math.radians(sensor.azimuth_min + span * i / (sensor.rays - 1))
        for i in range(sensor.rays)
    )


def patch_at(position, config):
    """Index of the patch containing ``position`` (closed disc), or None."""
    x, y = position
    r2 = config.patch_radius * config.patch_radius
    for i, (cx, cy) in enumerate(config.patch_centers):
        dx, dy = x - cx, y - cy
        if dx * dx + dy * dy <= r2:
            return i
    return None


def _ray_disc(ox, oy, dx, dy, cx, cy, radius):
    mx, my = ox - cx, oy - cy
    c = mx * mx + my * my - radius * radius
    if c <= 0.0:
        return 0.0  # origin inside the disc
    b = mx * dx + my * dy
    disc = b * b - c
    if disc < 0.0 or b > 0.0:
        return None
    return -b - math.sqrt(disc)


def _ray_boundary(ox, oy, dx, dy, half):
    t = math.inf
    if dx > 0.0:
        t = min(t, (half - ox) / dx)
    elif dx < 0.0:
        t = min(t, (-half - ox) / dx)
    if dy > 0.0:
        t = min(t, (half - oy) / dy)
    elif dy < 0.0:
        t = min(t, (-half - oy) / dy)
    return max(t, 0.0)


def lidar_scan(state, config, last_reward=0.0, last_action=NOOP):
    """Cast the azimuth fan from the agent and encode the first hit of each ray."""
    sensor = config.sensor
    ox, oy = state.position
    half = config.world_size / 2
    centers = config.patch_centers
    colors = [patch_color(n, config.n0, config.lam) for n in state.depletion]
    rays = []
    for offset in _ray_offsets(sensor):
        angle = state.heading + offset
        dx, dy = math.cos(angle), math.sin(angle)
        kind, color, dist = BOUNDARY, (0.0, 0.0, 0.0), _ray_boundary(ox, oy, dx, dy, half)
        for i, (cx, cy) in enumerate(centers):
            t = _ray_disc(ox, oy, dx, dy, cx, cy, config.patch_radius)
            if t is not None and t <= dist:
                kind, color, dist = PATCH, colors[i], t
        if dist > sensor.max_range:
            rays.append(RayHit(NOTHING, (0.0, 0.0, 0.0), 1.0))
        else:
            rays.append(RayHit(kind, color, dist / sensor.max_range))
    return Observation(tuple(rays), last_reward, last_action)


# -- dynamics ----------------------------------------------------------------


def reset(config, seed=0):
    """Start state: world centre, facing perpendicular to the patch axis.

    The start is fixed by the task; ``seed`` is accepted so callers can treat
    worlds and agents uniformly, and is recorded in the episode log.
    """
    config.validate()
    return WorldState(
        step=0,
        position=(0.0, 0.0),
        heading=math.pi / 2,
        velocity=(0.0, 0.0),
        depletion=(0, 0),
        inside=None,
        score=0.0,
    )


def step(state, action, config):
    """Advance one step: move, test membership, pay reward, update counters."""
    if state.step >= config.episode_steps:
        raise EpisodeCompleteError(
            f"episode finished after {config.episode_steps} steps"
        )
    action = Action.clamped(*action)
    motion = config.motion

    heading = math.remainder(state.heading + action.rotate * motion.max_turn, math.tau)
    hx, hy = math.cos(heading), math.sin(heading)
    # strafe is positive to the agent's left
    px, py = -hy, hx
    g = motion.gain
    vx = motion.inertia * state.velocity[0] + g * (action.forward * hx + action.strafe * px)
    vy = motion.inertia * state.velocity[1] + g * (action.forward * hy + action.strafe * py)
    speed = math.hypot(vx, vy)
    if speed > motion.max_speed:
        scale = motion.max_speed / speed
        vx, vy = vx * scale, vy * scale

    half = config.world_size / 2
    x, y = state.position[0] + vx, state.position[1] + vy
    if x > half or x < -half:
        x, vx = min(half, max(-half, x)), 0.0
    if y > half or y < -half:
        y, vy = min(half, max(-half, y)), 0.0

    inside = patch_at((x, y), config)
    depletion = state.depletion
    reward = 0.0
    if inside is not None:
        reward = patch_reward(depletion[inside], config.n0, config.lam)
        counts = [0, 0]
        counts[inside] = depletion[inside] + 1
        depletion = (counts[0], counts[1])

    new = WorldState(
        step=state.step + 1,
        position=(x, y),
        heading=heading,
        velocity=(vx, vy),
        depletion=depletion,
        inside=inside,
        score=state.score + reward,
    )
    return new, reward, lidar_scan(new, config, reward, action)


# -- episodes and logs -------------------------------------------------------


class Agent(Protocol):
    def reset(self, config: WorldConfig, seed: int) -> None: ...

    def act(self, state: WorldState) -> Action: ...

    def observe(self, state: WorldState, observation: Observation, reward: float) -> None: ...

    def state_vector(self) -> Sequence[float] | None: ...


@dataclass(frozen=True)
class StepRecord:
    step: int
    pos: tuple[float, float]
    heading: float
    action: tuple[float, ...]
    reward: float
    inside: int | None
    depletion: tuple[int, int]
    agent_state: tuple[float, ...] | None

    def to_json(self):
        return json.dumps(
            {
                "step": self.step,
                "pos": list(self.pos),
                "heading": self.heading,
                "action": list(self.action),
                "reward": self.reward,
                "inside": self.inside,
                "depletion": list(self.depletion),
                "agent_state": None if self.agent_state is None else list(self.agent_state),
            }
        )


RECORD_FIELDS = ("step", "pos", "heading", "action", "reward", "inside", "depletion", "agent_state")


@dataclass
class EpisodeLog:
    """Column-oriented log of one episode.

    ``inside`` uses -1 for "outside both patches"; ``agent_state`` is an
    ``(steps, D)`` array or None when the agent exposes no state.
    """

    config: WorldConfig
    seed: int
    agent: dict | None
    step: np.ndarray
    pos: np.ndarray
    heading: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    inside: np.ndarray
    depletion: np.ndarray
    agent_state: np.ndarray | None = None
    episode_id: str = ""

    def __len__(self):
        return len(self.step)

    @property
    def score(self):
        # sequential sum, matching the world's running score exactly
        total = 0.0
        for r in self.reward.tolist():
            total += r
        return total

    @property
    def patch_distance(self):
        return self.config.patch_distance

    @property
    def agent_id(self):
        if not self.agent:
            return "agent"
        return self.agent.get("name") or json.dumps(self.agent, sort_keys=True)

    def records(self) -> Iterator[StepRecord]:
        for i in range(len(self)):
            inside = int(self.inside[i])
            yield StepRecord(
                step=int(self.step[i]),
                pos=(float(self.pos[i, 0]), float(self.pos[i, 1])),
                heading=float(self.heading[i]),
                action=tuple(float(a) for a in self.action[i]),
                reward=float(self.reward[i]),
                inside=None if inside < 0 else inside,
                depletion=(int(self.depletion[i, 0]), int(self.depletion[i, 1])),
                agent_state=None
                if self.agent_state is None
                else tuple(float(v) for v in self.agent_state[i]),
            )

    def header(self):
        return {
            "type": "header",
            "config": self.config.to_dict(),
            "seed": self.seed,
            "agent": self.agent,
            "episode_id": self.episode_id,
        }

    def to_jsonl(self, path):
        path = Path(path)
        with path.open("w") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for record in self.records():
                fh.write(record.to_json() + "\n")
        return path

    @classmethod
    def from_records(cls, config, seed, agent, records, episode_id=""):
        records = list(records)
        states = [r.agent_state for r in records]
        agent_state = None
        if records and all(s is not None for s in states):
            agent_state = np.asarray(states, dtype=float)
        return cls(
            config=config,
            seed=seed,
            agent=agent,
            step=np.asarray([r.step for r in records], dtype=np.int64),
            pos=np.asarray([r.pos for r in records], dtype=float).reshape(-1, 2),
            heading=np.asarray([r.heading for r in records], dtype=float),
            action=np.asarray([r.action for r in records], dtype=float).reshape(-1, 5),
            reward=np.asarray([r.reward for r in records], dtype=float),
            inside=np.asarray(
                [-1 if r.inside is None else r.inside for r in records], dtype=np.int64
            ),
            depletion=np.asarray([r.depletion for r in records], dtype=np.int64).reshape(-1, 2),
            agent_state=agent_state,
            episode_id=episode_id,
        )

    @classmethod
    def from_jsonl(cls, path):
        path = Path(path)
        records = []
        header = None
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LogParseError(f"{path}: invalid JSON ({exc.msg})", lineno) from exc
                if lineno == 1:
                    if obj.get("type") != "header":
                        raise LogParseError(f"{path}: first line must be the header", lineno)
                    header = obj
                    continue
                if not isinstance(obj, dict) or set(obj) != set(RECORD_FIELDS):
                    raise LogParseError(f"{path}: record fields must be {RECORD_FIELDS}", lineno)
                try:
                    records.append(
                        StepRecord(
                            step=int(obj["step"]),
                            pos=(float(obj["pos"][0]), float(obj["pos"][1])),
                            heading=float(obj["heading"]),
                            action=tuple(float(a) for a in obj["action"]),
                            reward=float(obj["reward"]),
                            inside=None if obj["inside"] is None else int(obj["inside"]),
                            depletion=(int(obj["depletion"][0]), int(obj["depletion"][1])),
                            agent_state=None
                            if obj["agent_state"] is None
                            else tuple(float(v) for v in obj["agent_state"]),
                        )
                    )
                except (TypeError, ValueError, IndexError) as exc:
                    raise LogParseError(f"{path}: bad record ({exc})", lineno) from exc
        if header is None:
            raise LogParseError(f"{path}: empty log", 1)
        try:
            config = WorldConfig.from_dict(header["config"])
        except (ConfigError, KeyError) as exc:
            raise LogParseError(f"{path}: bad header config ({exc})", 1) from exc
        return cls.from_records(
            config,
            header.get("seed"),
            header.get("agent"),
            records,
            episode_id=header.get("episode_id") or path.stem,
        )


def run_episode(config, agent, seed=0, agent_info=None, episode_id=""):
    """Close the loop between ``agent`` and the world for a full episode."""
    state = reset(config, seed)
    agent.reset(config, seed)
    agent.observe(state, lidar_scan(state, config), 0.0)

    n = config.episode_steps
    pos = np.empty((n, 2))
    heading = np.empty(n)
    actions = np.empty((n, 5))
    rewards = np.empty(n)
    inside = np.empty(n, dtype=np.int64)
    depletion = np.empty((n, 2), dtype=np.int64)
    agent_states = []

    for t in range(n):
        action = Action.clamped(*agent.act(state))
        state, reward, obs = step(state, action, config)
        agent.observe(state, obs, reward)
        pos[t] = state.position
        heading[t] = state.heading
        actions[t] = action
        rewards[t] = reward
        inside[t] = -1 if state.inside is None else state.inside
        depletion[t] = state.depletion
        agent_states.append(agent.state_vector())

    agent_state = None
    if agent_states and all(s is not None for s in agent_states):
        agent_state = np.asarray(agent_states, dtype=float)
    return EpisodeLog(
        config=config,
        seed=seed,
        agent=agent_info,
        step=np.arange(1, n + 1, dtype=np.int64),
        pos=pos,
        heading=heading,
        action=actions,
        reward=rewards,
        inside=inside,
        depletion=depletion,
        agent_state=agent_state,
        episode_id=episode_id,
    )
