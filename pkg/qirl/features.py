"""Per-step features phi(s_t, a_t) and their trajectory averages.

Continuous features lie in [-1, 1] with 1 meaning the target is met exactly;
the three binary features mark the terminal step of a trajectory.
"""
import math
from typing import List, NamedTuple, Sequence

import numpy as np

from .errors import EmptyTrajectoryError
from .models import GRAVITY, Action, AgentSpec, AgentState, Road, Terminal, Trajectory

FEATURE_NAMES = ('des_lane', 'des_velocity', 'lane_center', 'acceleration',
                 'collision', 'invalid_state', 'invalid_action')
PREVIOUS_NAMES = ('prev_des_lane', 'prev_des_velocity', 'prev_lane_center')
AUGMENTED_NAMES = FEATURE_NAMES + PREVIOUS_NAMES

N_FEATURES = len(FEATURE_NAMES)
N_AUGMENTED = len(AUGMENTED_NAMES)


class FeatureVector(NamedTuple):
    des_lane: float
    des_velocity: float
    lane_center: float
    acceleration: float
    collision: float
    invalid_state: float
    invalid_action: float


class AugmentedFeatureVector(NamedTuple):
    des_lane: float
    des_velocity: float
    lane_center: float
    acceleration: float
    collision: float
    invalid_state: float
    invalid_action: float
    prev_des_lane: float
    prev_des_velocity: float
    prev_lane_center: float


def acceleration_cost(state: AgentState, action: Action) -> float:
    """c_acc for a step with piecewise-constant ax and lateral velocity.

    a(t) is constant over the step, so the RMS integral reduces to |a|/g.
    Lateral acceleration is the change of lateral velocity over the step.
    """
    a_lat = (action.vy - state.vy) / action.dt
    return math.hypot(action.ax, a_lat) / GRAVITY


def feature_step(state: AgentState, action: Action, agent_spec: AgentSpec, road: Road,
                 terminal: Terminal = Terminal.NONE) -> FeatureVector:
    lane = road.lane_of(state.y)
    des_lane = max(1.0 - abs(lane - agent_spec.desired_lane), -1.0)
    des_velocity = max(1.0 - 10.0 * abs(state.v / agent_spec.desired_velocity - 1.0), -1.0)
    # center of the lane currently occupied
    lane_center = max(1.0 - abs(road.lane_center(lane) - state.y) / (road.lane_width / 4.0), -1.0)
    acceleration = max(1.0 - acceleration_cost(state, action) / (GRAVITY / 8.0), -1.0)
    return FeatureVector(
        des_lane, des_velocity, lane_center, acceleration,
        1.0 if terminal is Terminal.COLLISION else 0.0,
        1.0 if terminal is Terminal.INVALID_STATE else 0.0,
        1.0 if terminal is Terminal.INVALID_ACTION else 0.0,
    )


def feature_sequence(trajectory: Trajectory, agent_spec: AgentSpec, road: Road) -> List[FeatureVector]:
    last = len(trajectory.steps) - 1
    return [
        feature_step(state, action, agent_spec, road, trajectory.terminal if t == last else Terminal.NONE)
        for t, (state, action) in enumerate(trajectory.steps)
    ]


def feature_trajectory(trajectory: Trajectory, agent_spec: AgentSpec, road: Road) -> FeatureVector:
    if not trajectory.steps:
        raise EmptyTrajectoryError('cannot average features of an empty trajectory')
    rows = np.asarray(feature_sequence(trajectory, agent_spec, road), dtype=float)
    return FeatureVector(*(float(v) for v in rows.mean(axis=0)))


def augment_one(features: Sequence[float], previous: Sequence[float]) -> AugmentedFeatureVector:
    return AugmentedFeatureVector(*features[:N_FEATURES], *previous[:3])


def augment(sequence: Sequence[Sequence[float]]) -> List[AugmentedFeatureVector]:
    out = []
    previous = None
    for fv in sequence:
        out.append(augment_one(fv, fv if previous is None else previous))
        previous = fv
    return out


def featurize(trajectory: Trajectory, agent_spec: AgentSpec, road: Road) -> np.ndarray:
    """(T, 10) augmented feature matrix, the form the reward models consume."""
    if not trajectory.steps:
        raise EmptyTrajectoryError('cannot featurize an empty trajectory')
    return np.asarray(augment(feature_sequence(trajectory, agent_spec, road)), dtype=float)
