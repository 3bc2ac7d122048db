"""Sample-vs-expert similarity and feature satisfaction rates."""
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GridMismatchError, NeighbourCountError
from .models import Scenario, Terminal, Trajectory

REPORT_COLUMNS = ('collision', 'invalid', 'desired_lane', 'desired_velocity', 'mu_d', 'sigma_d')
# expert-vs-expert kNN distance of the same scenario, the reachable lower end of mu_d
FLOOR_COLUMNS = ('floor_mu_d', 'floor_sigma_d')
MEAN_ROW = 'mean'


@dataclass(frozen=True)
class TrajectoryDistance:
    mean: float  # mu(d), meters
    std: float  # sigma(d), meters
    k: int
    per_sample: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ScenarioReport:
    scenario: str
    collision: float
    invalid: float
    desired_lane: float
    desired_velocity: float
    distance: TrajectoryDistance
    deltas: Optional[Dict[str, float]] = None
    floor: Optional[TrajectoryDistance] = None

    def values(self) -> Dict[str, float]:
        return {
            'collision': self.collision,
            'invalid': self.invalid,
            'desired_lane': self.desired_lane,
            'desired_velocity': self.desired_velocity,
            'mu_d': self.distance.mean,
            'sigma_d': self.distance.std,
        }

    def floor_values(self) -> Dict[str, Optional[float]]:
        if self.floor is None:
            return {c: None for c in FLOOR_COLUMNS}
        return {'floor_mu_d': self.floor.mean, 'floor_sigma_d': self.floor.std}


def positions(trajectory: Trajectory) -> np.ndarray:
    """(x, y) on the scenario grid; truncated trajectories hold their last position."""
    pts = [(s.x, s.y) for s in trajectory.states] or [(trajectory.start.x, trajectory.start.y)]
    length = max(trajectory.horizon, len(pts), 1)
    pts.extend([pts[-1]] * (length - len(pts)))
    return np.asarray(pts, dtype=float)


def _check_grid(trajectories: Sequence[Trajectory]):
    grids = {(t.dt, t.horizon) for t in trajectories}
    if len(grids) > 1:
        raise GridMismatchError(f'trajectories on different time grids: {sorted(grids)}')


def pairwise_distance(traj_a: Trajectory, traj_b: Trajectory) -> float:
    _check_grid([traj_a, traj_b])
    return float(np.linalg.norm(positions(traj_a) - positions(traj_b), axis=-1).mean())


def distance_matrix(samples: Sequence[Trajectory], experts: Sequence[Trajectory]) -> np.ndarray:
    _check_grid(list(samples) + list(experts))
    p = np.stack([positions(t) for t in samples])
    q = np.stack([positions(t) for t in experts])
    return np.linalg.norm(p[:, None] - q[None], axis=-1).mean(axis=-1)


def _by_agent(trajectories: Sequence[Trajectory]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = {}
    for i, t in enumerate(trajectories):
        groups.setdefault(t.agent_id, []).append(i)
    return groups


def _knn_means(samples: Sequence[Trajectory], experts: Sequence[Trajectory], k: int,
               leave_one_out: bool = False) -> np.ndarray:
    """Mean distance of each sample to its k nearest experts of the same agent.

    With ``leave_one_out`` the samples are the experts themselves and each one
    is matched against the others.
    """
    if k < 1:
        raise NeighbourCountError(f'k must be >= 1, got {k}')
    pools = _by_agent(experts)
    means = np.empty(len(samples))
    for agent, rows in _by_agent(samples).items():
        pool = [experts[j] for j in pools.get(agent, [])]
        needed = k + 1 if leave_one_out else k
        if len(pool) < needed:
            raise NeighbourCountError(f'need at least k={k} experts of agent {agent} to compare against, '
                                      f'got {len(pool) - (1 if leave_one_out else 0)}')
        d = distance_matrix([samples[i] for i in rows], pool)
        if leave_one_out:
            np.fill_diagonal(d, np.inf)
        means[rows] = np.sort(d, axis=1)[:, :k].mean(axis=1)
    return means


def _summary(means: np.ndarray, k: int) -> TrajectoryDistance:
    return TrajectoryDistance(float(means.mean()), float(means.std()), k, tuple(float(m) for m in means))


def knn_distance(samples: Sequence[Trajectory], experts: Sequence[Trajectory], k: int = 3) -> TrajectoryDistance:
    return _summary(_knn_means(samples, experts, k), k)


def pooled_knn_distance(groups: Sequence[Tuple[Sequence[Trajectory], Sequence[Trajectory]]], k: int = 3) -> TrajectoryDistance:
    """kNN distance over several scenarios; samples only meet experts of their own scenario."""
    return _summary(np.concatenate([_knn_means(s, e, k) for s, e in groups if len(s)]), k)


def expert_floor(experts: Sequence[Trajectory], k: int = 3) -> Optional[TrajectoryDistance]:
    """Expert-vs-expert kNN distance, each expert held out against the rest.

    None when some agent has no more than k experts.
    """
    counts = [len(rows) for rows in _by_agent(experts).values()]
    if not counts or min(counts) <= k:
        return None
    return _summary(_knn_means(experts, experts, k, leave_one_out=True), k)


def pooled_expert_floor(expert_groups: Sequence[Sequence[Trajectory]], k: int = 3) -> Optional[TrajectoryDistance]:
    floors = [expert_floor(e, k) for e in expert_groups]
    if not floors or any(f is None for f in floors):
        return None
    return _summary(np.concatenate([f.per_sample for f in floors]), k)


def reached_desired_lane(trajectory: Trajectory, scenario: Scenario) -> bool:
    spec = scenario.agents[trajectory.agent_id]
    return scenario.road.lane_of(trajectory.final_state.y) == spec.desired_lane


def reached_desired_velocity(trajectory: Trajectory, scenario: Scenario, band: float = 0.1) -> bool:
    spec = scenario.agents[trajectory.agent_id]
    return abs(trajectory.final_state.v / spec.desired_velocity - 1.0) <= band


def scenario_report(samples: Sequence[Trajectory], experts: Sequence[Trajectory], scenario: Scenario,
                    thresholds, baseline: Optional[ScenarioReport] = None) -> ScenarioReport:
    if not samples or not experts:
        raise ValueError('scenario report needs non-empty sample and expert batches')
    n = float(len(samples))
    report = ScenarioReport(
        scenario=scenario.name,
        collision=sum(t.terminal is Terminal.COLLISION for t in samples) / n,
        invalid=sum(t.terminal in (Terminal.INVALID_STATE, Terminal.INVALID_ACTION) for t in samples) / n,
        desired_lane=sum(reached_desired_lane(t, scenario) for t in samples) / n,
        desired_velocity=sum(reached_desired_velocity(t, scenario, thresholds.velocity_band) for t in samples) / n,
        distance=knn_distance(samples, experts, thresholds.k),
        floor=expert_floor(experts, thresholds.k),
    )
    if baseline is None:
        return report
    mine, theirs = report.values(), baseline.values()
    return replace(report, deltas={c: mine[c] - theirs[c] for c in REPORT_COLUMNS})


def convergence_curve(training_log) -> List[Tuple[int, float, float]]:
    return [(r.step, r.mu_d, r.sigma_d) for r in training_log if r.mu_d is not None]


def mean_report(reports: Sequence[ScenarioReport]) -> ScenarioReport:
    """Unweighted average over scenarios; deltas and floor only when every row has them."""
    if not reports:
        raise ValueError('mean over no reports')

    def avg(values):
        return float(np.mean(values))

    def avg_distance(ds):
        return TrajectoryDistance(avg([d.mean for d in ds]), avg([d.std for d in ds]), ds[0].k)

    deltas = None
    if all(r.deltas for r in reports):
        deltas = {c: avg([r.deltas[c] for r in reports]) for c in REPORT_COLUMNS}
    floors = [r.floor for r in reports]
    return ScenarioReport(
        scenario=MEAN_ROW,
        collision=avg([r.collision for r in reports]),
        invalid=avg([r.invalid for r in reports]),
        desired_lane=avg([r.desired_lane for r in reports]),
        desired_velocity=avg([r.desired_velocity for r in reports]),
        distance=avg_distance([r.distance for r in reports]),
        deltas=deltas,
        floor=avg_distance(floors) if all(f is not None for f in floors) else None,
    )


def with_mean_rows(rows: Sequence[Tuple[str, ScenarioReport]]) -> List[Tuple[str, ScenarioReport]]:
    """Append one mean row per model label that covers more than one scenario."""
    rows = list(rows)
    labels = list(dict.fromkeys(label for label, _ in rows))
    for label in labels:
        mine = [r for lbl, r in rows if lbl == label]
        if len(mine) > 1:
            rows.append((label, mean_report(mine)))
    return rows
