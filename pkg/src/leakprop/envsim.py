"""2D continuous labyrinths, the uniform random policy and episode simulation.

Coordinates use the screen convention of the heatmaps: x grows to the right,
y grows downward, so the "upper" room of map2 is ``y < 150``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from leakprop import _rng
from leakprop._backend import kernels

WIDTH = 400.0
HEIGHT = 300.0
STEP_SIZE = 20.0
REWARD = 30.0
REWARD_RADIUS = 10.0
GAMMA = 0.99
MAX_LEN = 2000
N_EPISODES = 100
N_ACTIONS = _rng.N_ANGLES
MAP_IDS = ("map1", "map2", "map3")
SPAWN_ATTEMPTS = 1000

# stream tags for substream()
_TAG_POLICY = 1
_TAG_EPISODE = 2
_TAG_SPAWN = 3


class ConfigurationError(ValueError):
    pass


class AgentState(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class RewardZone:
    center: tuple[float, float]
    radius: float
    reward: float


@dataclass(frozen=True)
class MapLayout:
    map_id: str
    width: float
    height: float
    walls: tuple[tuple[float, float, float, float], ...]
    reward_zones: tuple[RewardZone, ...]
    spawn_region: tuple[float, float, float, float]
    spawn_exclude: tuple[tuple[float, float, float, float], ...] = ()
    regions: dict = field(default_factory=dict, compare=False)
    step_size: float = STEP_SIZE

    def __post_init__(self):
        for x1, y1, x2, y2 in self.walls:
            for x, y in ((x1, y1), (x2, y2)):
                if not (0 <= x <= self.width and 0 <= y <= self.height):
                    raise ConfigurationError(f"wall endpoint ({x}, {y}) outside map bounds")
        for z in self.reward_zones:
            cx, cy = z.center
            if not (0 <= cx <= self.width and 0 <= cy <= self.height):
                raise ConfigurationError(f"reward centre {z.center} outside map bounds")
            if z.radius <= 0:
                raise ConfigurationError("reward zone radius must be positive")
            for w in self.walls:
                if _segment_point_dist2(w, cx, cy) <= z.radius**2:
                    raise ConfigurationError(f"reward zone at {z.center} touches a wall")

    @cached_property
    def wall_array(self) -> np.ndarray:
        return np.ascontiguousarray(np.array(self.walls, dtype=np.float64).reshape(-1, 4))

    @cached_property
    def zone_array(self) -> np.ndarray:
        rows = [(z.center[0], z.center[1], z.radius) for z in self.reward_zones]
        return np.ascontiguousarray(np.array(rows, dtype=np.float64).reshape(-1, 3))

    @cached_property
    def zone_rewards(self) -> np.ndarray:
        return np.array([z.reward for z in self.reward_zones], dtype=np.float64)

    @cached_property
    def move_table(self) -> tuple[np.ndarray, np.ndarray]:
        rad = np.deg2rad(np.arange(N_ACTIONS, dtype=np.float64))
        return (np.ascontiguousarray(self.step_size * np.cos(rad)),
                np.ascontiguousarray(self.step_size * np.sin(rad)))

    def on_wall(self, x, y) -> bool:
        return any(_on_segment(w, x, y) for w in self.walls)

    def in_bounds(self, x, y) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def zone_at(self, x, y) -> int:
        """Index of the reward zone containing (x, y), or -1."""
        for i, z in enumerate(self.reward_zones):
            if (x - z.center[0]) ** 2 + (y - z.center[1]) ** 2 <= z.radius**2:
                return i
        return -1

    def is_valid_state(self, x, y) -> bool:
        return self.in_bounds(x, y) and not self.on_wall(x, y)

    def spawnable(self, x, y) -> bool:
        if not self.is_valid_state(x, y) or self.zone_at(x, y) >= 0:
            return False
        return not any(_in_rect(r, x, y) for r in self.spawn_exclude)

    def to_dict(self) -> dict:
        return {
            "map_id": self.map_id,
            "width": self.width,
            "height": self.height,
            "step_size": self.step_size,
            "walls": [list(w) for w in self.walls],
            "reward_zones": [
                {"center": list(z.center), "radius": z.radius, "reward": z.reward}
                for z in self.reward_zones
            ],
            "spawn_region": list(self.spawn_region),
            "spawn_exclude": [list(r) for r in self.spawn_exclude],
            "regions": {k: list(v) for k, v in self.regions.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapLayout":
        return cls(
            map_id=d["map_id"],
            width=float(d["width"]),
            height=float(d["height"]),
            walls=tuple(tuple(float(v) for v in w) for w in d["walls"]),
            reward_zones=tuple(
                RewardZone(tuple(map(float, z["center"])), float(z["radius"]), float(z["reward"]))
                for z in d["reward_zones"]
            ),
            spawn_region=tuple(map(float, d["spawn_region"])),
            spawn_exclude=tuple(tuple(map(float, r)) for r in d.get("spawn_exclude", [])),
            regions={k: tuple(map(float, v)) for k, v in d.get("regions", {}).items()},
            step_size=float(d.get("step_size", STEP_SIZE)),
        )


def _segment_point_dist2(w, x, y):
    ax, ay, bx, by = w
    ux, uy = bx - ax, by - ay
    den = ux * ux + uy * uy
    t = 0.0 if den == 0 else min(1.0, max(0.0, ((x - ax) * ux + (y - ay) * uy) / den))
    return (x - ax - t * ux) ** 2 + (y - ay - t * uy) ** 2


def _on_segment(w, x, y):
    # exact collinearity test; avoids rounding in the projection form
    ax, ay, bx, by = w
    if (bx - ax) * (y - ay) - (by - ay) * (x - ax) != 0.0:
        return False
    return min(ax, bx) <= x <= max(ax, bx) and min(ay, by) <= y <= max(ay, by)


def _in_rect(r, x, y):
    return r[0] <= x <= r[2] and r[1] <= y <= r[3]


def builtin_map(map_id: str) -> MapLayout:
    """Canonical layouts for the three labyrinths."""
    full = (0.0, 0.0, WIDTH, HEIGHT)
    if map_id == "map1":
        # S-shape: top corridor opens right into the middle, middle opens left into the bottom
        return MapLayout(
            map_id="map1", width=WIDTH, height=HEIGHT,
            walls=((0.0, 100.0, 300.0, 100.0), (100.0, 200.0, 400.0, 200.0)),
            reward_zones=(RewardZone((370.0, 30.0), REWARD_RADIUS, REWARD),
                          RewardZone((30.0, 270.0), REWARD_RADIUS, REWARD)),
            spawn_region=full,
            regions={"top": (0.0, 0.0, WIDTH, 100.0),
                     "middle": (0.0, 100.0, WIDTH, 200.0),
                     "bottom": (0.0, 200.0, WIDTH, HEIGHT)},
        )
    if map_id == "map2":
        return MapLayout(
            map_id="map2", width=WIDTH, height=HEIGHT,
            walls=((0.0, 150.0, 400.0, 150.0),),
            reward_zones=(RewardZone((200.0, 250.0), REWARD_RADIUS, REWARD),),
            spawn_region=full,
            regions={"upper": (0.0, 0.0, WIDTH, 150.0),
                     "lower": (0.0, 150.0, WIDTH, HEIGHT)},
        )
    if map_id == "map3":
        # U: a band along y<100 joins two arms; the chamber between the arms'
        # far ends is sealed and only pads the map
        return MapLayout(
            map_id="map3", width=WIDTH, height=HEIGHT,
            walls=((100.0, 100.0, 100.0, 300.0), (300.0, 100.0, 300.0, 300.0),
                   (100.0, 200.0, 300.0, 200.0)),
            reward_zones=(RewardZone((50.0, 270.0), REWARD_RADIUS, REWARD),),
            spawn_region=full,
            spawn_exclude=((100.0, 200.0, 300.0, 300.0),),
            regions={"padding": (100.0, 200.0, 300.0, HEIGHT),
                     "notch": (100.0, 100.0, 300.0, 200.0),
                     "left_arm": (0.0, 100.0, 100.0, HEIGHT),
                     "right_arm": (300.0, 100.0, WIDTH, HEIGHT)},
        )
    raise ConfigurationError(f"unknown map id {map_id!r}; expected one of {MAP_IDS}")


def load_map(spec: str) -> MapLayout:
    """Builtin id or path to a JSON map file."""
    if spec in MAP_IDS:
        return builtin_map(spec)
    with open(spec) as fh:
        return MapLayout.from_dict(json.load(fh))


def save_map(layout: MapLayout, path) -> None:
    with open(path, "w") as fh:
        json.dump(layout.to_dict(), fh, indent=1)


def step(layout: MapLayout, s, angle):
    """Move one step from ``s`` towards ``angle`` degrees.

    Returns ``(state, reward, terminal)``. A move that crosses a wall or leaves
    the map is blocked and the agent stays put. Crossing a reward zone ends
    the episode with that zone's reward.
    """
    x, y = float(s[0]), float(s[1])
    if not layout.is_valid_state(x, y):
        raise ValueError(f"invalid state ({x}, {y}): outside the map or on a wall")
    if not 0 <= angle < 360:
        raise ValueError(f"angle {angle} outside [0, 360)")
    if float(angle).is_integer():
        dx, dy = layout.move_table
        ddx, ddy = float(dx[int(angle)]), float(dy[int(angle)])
    else:
        rad = math.radians(angle)
        ddx, ddy = layout.step_size * math.cos(rad), layout.step_size * math.sin(rad)
    nx, ny, zone = kernels.step(layout.wall_array, layout.zone_array, layout.width,
                                layout.height, x, y, ddx, ddy)
    if zone >= 0:
        return AgentState(nx, ny), float(layout.zone_rewards[zone]), True
    return AgentState(nx, ny), 0.0, False


@dataclass
class Episode:
    xs: np.ndarray
    ys: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: bool

    def __len__(self):
        return len(self.actions)

    @property
    def states(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=1)


def rollout(layout: MapLayout, start, policy_seed: int, max_len: int) -> Episode:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    x0, y0 = float(start[0]), float(start[1])
    if not layout.is_valid_state(x0, y0):
        raise ValueError(f"invalid start ({x0}, {y0})")
    dx, dy = layout.move_table
    key = _rng.substream(policy_seed, _TAG_POLICY)
    xs, ys, acts, zone = kernels.simulate_episode(
        layout.wall_array, layout.zone_array, layout.width, layout.height,
        dx, dy, x0, y0, key, max_len)
    rewards = np.zeros(len(acts), dtype=np.float64)
    if zone >= 0:
        rewards[-1] = layout.zone_rewards[zone]
    return Episode(np.asarray(xs), np.asarray(ys), np.asarray(acts, dtype=np.int64),
                   rewards, bool(zone >= 0))


def sample_start(layout: MapLayout, key: int) -> AgentState:
    """Rejection-sample a spawn point; fails after SPAWN_ATTEMPTS misses."""
    x0, y0, x1, y1 = layout.spawn_region
    u = _rng.stream_uniform(key, 0, 2 * SPAWN_ATTEMPTS)
    for j in range(SPAWN_ATTEMPTS):
        x = x0 + u[2 * j] * (x1 - x0)
        y = y0 + u[2 * j + 1] * (y1 - y0)
        if layout.spawnable(x, y):
            return AgentState(float(x), float(y))
    raise ConfigurationError(f"spawn rejection failed {SPAWN_ATTEMPTS} times on {layout.map_id}")


@dataclass
class TrajectoryDataset:
    map_id: str
    gamma: float
    seed: int
    max_len: int
    episodes: list[Episode]

    @property
    def n_episodes(self):
        return len(self.episodes)

    def n_transitions(self):
        return sum(len(e) for e in self.episodes)

    def terminal_fraction(self):
        return sum(e.terminated for e in self.episodes) / max(1, len(self.episodes))

    def to_json(self) -> str:
        header = {"map_id": self.map_id, "gamma": self.gamma, "seed": self.seed,
                  "n_episodes": self.n_episodes, "max_len": self.max_len}
        eps = [{"x": e.xs.tolist(), "y": e.ys.tolist(), "action": e.actions.tolist(),
                "reward": e.rewards.tolist(), "terminated": e.terminated}
               for e in self.episodes]
        return json.dumps({"header": header, "episodes": eps}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TrajectoryDataset":
        d = json.loads(text)
        h = d["header"]
        episodes = [Episode(np.array(e["x"], dtype=np.float64), np.array(e["y"], dtype=np.float64),
                            np.array(e["action"], dtype=np.int64),
                            np.array(e["reward"], dtype=np.float64), bool(e["terminated"]))
                    for e in d["episodes"]]
        if len(episodes) != h["n_episodes"]:
            raise ValueError(f"header says {h['n_episodes']} episodes, file has {len(episodes)}")
        for e in episodes:
            if not (len(e.xs) == len(e.ys) == len(e.actions) + 1 == len(e.rewards) + 1):
                raise ValueError("episode arrays have inconsistent lengths")
        return cls(h["map_id"], float(h["gamma"]), int(h["seed"]), int(h["max_len"]), episodes)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "TrajectoryDataset":
        with open(path) as fh:
            return cls.from_json(fh.read())


def episode_policy_seed(seed: int, index: int) -> int:
    return _rng.substream(seed, _TAG_EPISODE, index)


def generate_episode(layout: MapLayout, seed: int, index: int, max_len: int) -> Episode:
    """Episode ``index`` of the dataset generated with ``seed``; reproducible on its own."""
    start = sample_start(layout, _rng.substream(seed, _TAG_SPAWN, index))
    return rollout(layout, start, episode_policy_seed(seed, index), max_len)


def generate_dataset(layout: MapLayout, n_episodes: int = N_EPISODES, max_len: int = MAX_LEN,
                     seed: int = 0, gamma: float = GAMMA) -> TrajectoryDataset:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    episodes = [generate_episode(layout, seed, i, max_len) for i in range(n_episodes)]
    return TrajectoryDataset(layout.map_id, gamma, seed, max_len, episodes)


def normalize_positions(xy, layout: MapLayout | None = None) -> np.ndarray:
    """Scale positions to [-1, 1]^2 for network input."""
    w = WIDTH if layout is None else layout.width
    h = HEIGHT if layout is None else layout.height
    xy = np.asarray(xy, dtype=np.float64)
    return np.stack([xy[..., 0] / (w / 2) - 1.0, xy[..., 1] / (h / 2) - 1.0], axis=-1)
