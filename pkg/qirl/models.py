import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

# Standard gravity, m/s^2
GRAVITY = 9.81


class Terminal(str, Enum):
    NONE = 'none'
    COLLISION = 'collision'
    INVALID_STATE = 'invalid_state'
    INVALID_ACTION = 'invalid_action'


@dataclass(frozen=True)
class Road:
    lane_count: int
    lane_width: float  # w, meters
    length: float  # meters

    def __post_init__(self):
        if self.lane_count < 1 or self.lane_width <= 0 or self.length <= 0:
            raise ValueError(f'invalid road geometry: {self}')

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    def lane_of(self, y: float) -> int:
        # y == width belongs to the top lane
        lane = int(math.floor(y / self.lane_width))
        return min(max(lane, 0), self.lane_count - 1)

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def on_road(self, y: float) -> bool:
        return 0.0 <= y <= self.width


@dataclass(frozen=True)
class Vehicle:
    length: float = 5.0
    width: float = 2.0
    ax_max: float = 4.0  # m/s^2
    vy_max: float = 1.0  # m/s


@dataclass(frozen=True)
class Obstacle:
    """Static axis-aligned rectangle given by its lower-left corner and extents."""
    x: float
    y: float
    length: float
    width: float


@dataclass(frozen=True)
class AgentSpec:
    mean_x: float
    mean_y: float
    std_x: float
    std_y: float
    start_speed: float
    desired_lane: int  # l_des
    desired_velocity: float  # v_des, m/s


@dataclass(frozen=True)
class Scenario:
    name: str
    road: Road
    agents: Tuple[AgentSpec, ...]
    obstacles: Tuple[Obstacle, ...] = ()
    horizon: int = 13  # T, decision steps
    dt: float = 0.8  # seconds per step
    vehicle: Vehicle = field(default_factory=Vehicle)

    def __post_init__(self):
        for spec in self.agents:
            if not 0 <= spec.desired_lane < self.road.lane_count:
                raise ValueError(f'desired lane {spec.desired_lane} outside road of {self.road.lane_count} lanes')
            if spec.desired_velocity <= 0:
                raise ValueError('desired velocity must be positive')
        if self.horizon < 0 or self.dt <= 0:
            raise ValueError('horizon must be >= 0 and dt > 0')

    @property
    def duration(self) -> float:
        return self.horizon * self.dt


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    v: float
    # lateral velocity applied by the previous action, 0 at the start state
    vy: float = 0.0


@dataclass(frozen=True)
class Action:
    ax: float
    vy: float
    dt: float = 0.8


@dataclass(frozen=True)
class Trajectory:
    agent_id: int
    start: AgentState
    steps: Tuple[Tuple[AgentState, Action], ...]
    terminal: Terminal = Terminal.NONE
    dt: float = 0.8
    horizon: int = 13
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> Tuple[AgentState, ...]:
        return tuple(s for s, _ in self.steps)

    @property
    def actions(self) -> Tuple[Action, ...]:
        return tuple(a for _, a in self.steps)

    @property
    def final_state(self) -> AgentState:
        return self.steps[-1][0] if self.steps else self.start
