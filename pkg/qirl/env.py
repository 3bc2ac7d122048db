"""Deterministic multi-agent highway environment."""
import logging
from typing import Callable, List, Sequence, Tuple

from .models import Action, AgentState, Obstacle, Road, Scenario, Terminal, Trajectory, Vehicle
from .utils import START, derive_seed, make_rng

logger = logging.getLogger(__name__)

# (t, joint states) -> one action per agent
JointPolicy = Callable[[int, Tuple[AgentState, ...]], Sequence[Action]]


def sample_start_state(scenario: Scenario, agent_index: int, rng_seed: int) -> AgentState:
    spec = scenario.agents[agent_index]
    rng = make_rng(rng_seed)
    x = float(rng.normal(spec.mean_x, spec.std_x))
    y = float(rng.normal(spec.mean_y, spec.std_y))
    x = min(max(x, 0.0), scenario.road.length)
    y = min(max(y, 0.0), scenario.road.width)
    return AgentState(x=x, y=y, v=spec.start_speed)


def step(state: AgentState, action: Action) -> AgentState:
    dt = action.dt
    if dt <= 0:
        raise ValueError('action duration must be positive')
    v_next = state.v + action.ax * dt
    if v_next >= 0.0:
        x = state.x + state.v * dt + 0.5 * action.ax * dt * dt
    else:
        # brakes to a standstill inside the step, no reversing
        x = state.x + 0.5 * state.v * (state.v / -action.ax)
        v_next = 0.0
    return AgentState(x=x, y=state.y + action.vy * dt, v=v_next, vy=action.vy)


def _overlap(a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def footprint(state: AgentState, vehicle: Vehicle) -> Tuple[float, float, float, float]:
    hl, hw = vehicle.length / 2.0, vehicle.width / 2.0
    return (state.x - hl, state.y - hw, state.x + hl, state.y + hw)


def is_feasible(action: Action, vehicle: Vehicle) -> bool:
    return abs(action.ax) <= vehicle.ax_max and abs(action.vy) <= vehicle.vy_max


def classify_step(states: Sequence[AgentState], actions: Sequence[Action], road: Road,
                  obstacles: Sequence[Obstacle] = (), vehicle: Vehicle = Vehicle()) -> List[Terminal]:
    if len(states) != len(actions):
        raise ValueError('one action per agent required')
    boxes = [footprint(s, vehicle) for s in states]
    obstacle_boxes = [(o.x, o.y, o.x + o.length, o.y + o.width) for o in obstacles]
    collided = [False] * len(states)
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            if _overlap(boxes[i], boxes[j]):
                collided[i] = collided[j] = True
        if not collided[i] and any(_overlap(boxes[i], ob) for ob in obstacle_boxes):
            collided[i] = True

    flags = []
    for i, (state, action) in enumerate(zip(states, actions)):
        if collided[i]:
            flags.append(Terminal.COLLISION)
        elif not road.on_road(state.y):
            flags.append(Terminal.INVALID_STATE)
        elif not is_feasible(action, vehicle):
            flags.append(Terminal.INVALID_ACTION)
        else:
            flags.append(Terminal.NONE)
    return flags


def rollout(scenario: Scenario, joint_policy: JointPolicy, rng_seed: int) -> List[Trajectory]:
    n = len(scenario.agents)
    starts = tuple(sample_start_state(scenario, i, derive_seed(rng_seed, START, i)) for i in range(n))
    states = starts
    steps: List[list] = [[] for _ in range(n)]
    terminals = [Terminal.NONE] * n

    for t in range(scenario.horizon):
        actions = tuple(joint_policy(t, states))
        if len(actions) != n:
            raise ValueError(f'policy returned {len(actions)} actions for {n} agents')
        flags = classify_step(states, actions, scenario.road, scenario.obstacles, scenario.vehicle)
        for i in range(n):
            steps[i].append((states[i], actions[i]))
        if any(f is not Terminal.NONE for f in flags):
            terminals = flags
            logger.debug('episode %s ended at t=%d: %s', rng_seed, t, [f.value for f in flags])
            break
        states = tuple(step(s, a) for s, a in zip(states, actions))

    return [
        Trajectory(agent_id=i, start=starts[i], steps=tuple(steps[i]), terminal=terminals[i],
                   dt=scenario.dt, horizon=scenario.horizon, seed=rng_seed)
        for i in range(n)
    ]


def replay(trajectory: Trajectory) -> Tuple[AgentState, ...]:
    """States reached by re-applying the stored actions from the start state."""
    states = []
    state = trajectory.start
    for _, action in trajectory.steps:
        states.append(state)
        state = step(state, action)
    return tuple(states)
