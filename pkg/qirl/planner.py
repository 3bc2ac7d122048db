"""Decoupled multi-agent MCTS, Softmax Q-Proposal and the trajectory sampler.

The search runs on anything implementing ``SearchProblem``; ``HighwayProblem``
binds a scenario and a reward model. Every agent keeps its own action
statistics at the shared joint-state nodes, a joint action is the tuple of the
per-agent UCT choices, and each agent backs up its own return.
Continuous actions are handled by progressive widening: a node may hold at
most ceil(k_pw * N(s)^alpha_pw) actions per agent, drawn first from the action
template (in a per-node shuffled order) and then as jittered template copies.
Returns inside one search are normalised by the remaining horizon at the root.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from .env import classify_step, sample_start_state, step
from .features import featurize, feature_step
from .models import Action, AgentState, Scenario, Terminal, Trajectory
from .reward import RewardModel
from .utils import SEARCH, SELECT, START, derive_seed, make_rng

logger = logging.getLogger(__name__)


class Transition(NamedTuple):
    state: Any
    rewards: Tuple[float, ...]
    done: bool
    flags: Optional[Tuple[Terminal, ...]] = None


class SearchProblem(Protocol):
    n_agents: int
    gamma: float

    def remaining(self, state) -> int:
        """Decisions left before the horizon."""

    def actions(self, agent: int, state) -> Sequence[Any]:
        """Action template of one agent; also the uniform rollout policy's support."""

    def perturb(self, action, rng: np.random.Generator) -> Optional[Any]:
        """Jittered copy of a template action, or None for purely discrete problems."""

    def transition(self, state, joint_action: Tuple[Any, ...]) -> Transition:
        ...


@dataclass(frozen=True)
class QEstimate:
    """Explored root actions of one agent in exploration order, with N(s0, a) and Q(s0, a)."""
    actions: Tuple[Any, ...]
    values: Tuple[float, ...]
    visits: Tuple[int, ...]

    def best_index(self) -> int:
        # ties go to the lowest action index
        return int(np.argmax(self.values))


@dataclass(frozen=True)
class AgentSelection:
    action: Any
    index: int
    probability: float
    log_probability: float
    distribution: Tuple[float, ...]


@dataclass(frozen=True)
class PlanStepResult:
    selections: Tuple[AgentSelection, ...]

    @property
    def joint_action(self) -> Tuple[Any, ...]:
        return tuple(s.action for s in self.selections)


class _Node:
    __slots__ = ('state', 'visits', 'actions', 'counts', 'values', 'orders', 'children')

    def __init__(self, state, n_agents: int):
        self.state = state
        self.visits = 0
        self.actions: List[list] = [[] for _ in range(n_agents)]
        self.counts: List[list] = [[] for _ in range(n_agents)]
        self.values: List[list] = [[] for _ in range(n_agents)]
        self.orders: List[Optional[np.ndarray]] = [None] * n_agents
        self.children: Dict[tuple, tuple] = {}


class MCTS:
    def __init__(self, problem: SearchProblem, uct_c: float = 1.0, pw_k: float = 2.0, pw_alpha: float = 0.5):
        self.problem = problem
        self.uct_c = uct_c
        self.pw_k = pw_k
        self.pw_alpha = pw_alpha

    def search(self, root_state, budget: int, rng_seed: int) -> List[QEstimate]:
        if budget < 1:
            raise ValueError('search budget must be >= 1')
        rng = make_rng(rng_seed)
        n = self.problem.n_agents
        root = _Node(root_state, n)
        scale = 1.0 / max(self.problem.remaining(root_state), 1)
        for _ in range(budget):
            self._iterate(root, rng, scale)
        return [
            QEstimate(tuple(root.actions[i]), tuple(root.values[i]), tuple(root.counts[i]))
            for i in range(n)
        ]

    def _iterate(self, root: _Node, rng: np.random.Generator, scale: float):
        problem = self.problem
        node, done, path = root, False, []
        while not done and problem.remaining(node.state) > 0:
            joint = tuple(self._select(node, i, rng) for i in range(problem.n_agents))
            child = node.children.get(joint)
            expanded = child is None
            if expanded:
                joint_action = tuple(node.actions[i][k] for i, k in enumerate(joint))
                tr = problem.transition(node.state, joint_action)
                child = (_Node(tr.state, problem.n_agents), tr.rewards, tr.done)
                node.children[joint] = child
            path.append((node, joint, child[1]))
            node, done = child[0], child[2]
            if expanded:
                break

        returns = [0.0] * problem.n_agents if done else self._rollout(node.state, rng)
        for parent, joint, rewards in reversed(path):
            returns = [r + problem.gamma * g for r, g in zip(rewards, returns)]
            parent.visits += 1
            for i, k in enumerate(joint):
                parent.counts[i][k] += 1
                parent.values[i][k] += (scale * returns[i] - parent.values[i][k]) / parent.counts[i][k]

    def _select(self, node: _Node, agent: int, rng: np.random.Generator) -> int:
        explored = node.actions[agent]
        cap = max(1, math.ceil(self.pw_k * node.visits ** self.pw_alpha))
        if len(explored) < cap:
            action = self._widen(node, agent, rng)
            if action is not None:
                explored.append(action)
                node.counts[agent].append(0)
                node.values[agent].append(0.0)
                return len(explored) - 1
        counts, values = node.counts[agent], node.values[agent]
        log_n = math.log(max(node.visits, 1))
        best, best_score = 0, -math.inf
        for k, (cnt, q) in enumerate(zip(counts, values)):
            if cnt == 0:
                return k
            score = q + self.uct_c * math.sqrt(log_n / cnt)
            if score > best_score:
                best, best_score = k, score
        return best

    def _widen(self, node: _Node, agent: int, rng: np.random.Generator):
        template = self.problem.actions(agent, node.state)
        if node.orders[agent] is None:
            node.orders[agent] = rng.permutation(len(template))
        k = len(node.actions[agent])
        if k < len(template):
            return template[node.orders[agent][k]]
        return self.problem.perturb(template[rng.integers(len(template))], rng)

    def _rollout(self, state, rng: np.random.Generator) -> List[float]:
        problem = self.problem
        rewards = []
        while problem.remaining(state) > 0:
            joint = []
            for i in range(problem.n_agents):
                template = problem.actions(i, state)
                joint.append(template[rng.integers(len(template))])
            tr = problem.transition(state, tuple(joint))
            rewards.append(tr.rewards)
            if tr.done:
                break
            state = tr.state
        returns = [0.0] * problem.n_agents
        for step_rewards in reversed(rewards):
            returns = [r + problem.gamma * g for r, g in zip(step_rewards, returns)]
        return returns


def mcts_q_estimate(problem: SearchProblem, joint_state, budget: int, rng_seed: int, config=None) -> List[QEstimate]:
    kwargs = {}
    if config is not None:
        kwargs = dict(uct_c=config.uct_c, pw_k=config.pw_k, pw_alpha=config.pw_alpha)
    return MCTS(problem, **kwargs).search(joint_state, budget, rng_seed)


def softmax_q_proposal(q_estimates: Sequence[QEstimate], c: float, rng_seed: int) -> PlanStepResult:
    if c <= 0:
        raise ValueError('softmax coefficient c must be positive')
    rng = make_rng(rng_seed)
    selections = []
    for q in q_estimates:
        if not q.actions:
            raise ValueError('no explored actions to select from')
        log_p = log_softmax(c * np.asarray(q.values, dtype=float))
        p = np.exp(log_p)
        k = int(rng.choice(len(p), p=p / p.sum()))
        selections.append(AgentSelection(q.actions[k], k, float(p[k]), float(log_p[k]), tuple(float(x) for x in p)))
    return PlanStepResult(tuple(selections))


def greedy_selection(q_estimates: Sequence[QEstimate]) -> PlanStepResult:
    selections = []
    for q in q_estimates:
        k = q.best_index()
        dist = tuple(1.0 if j == k else 0.0 for j in range(len(q.actions)))
        selections.append(AgentSelection(q.actions[k], k, 1.0, 0.0, dist))
    return PlanStepResult(tuple(selections))


@dataclass(frozen=True)
class EpisodeSample:
    states: Tuple[Any, ...]  # joint state at which each joint action was taken
    actions: Tuple[Tuple[Any, ...], ...]
    plans: Tuple[PlanStepResult, ...]
    flags: Optional[Tuple[Terminal, ...]]

    def step_log_probs(self, agent: int) -> Tuple[float, ...]:
        return tuple(p.selections[agent].log_probability for p in self.plans)

    def log_prob(self, agent: int) -> float:
        return sum(self.step_log_probs(agent))


def sample_episode(problem: SearchProblem, root_state, config, rng_seed: int, greedy: bool = False) -> EpisodeSample:
    """Receding-horizon sampling: re-search at every visited joint state."""
    states, actions, plans = [], [], []
    flags = None
    state, t = root_state, 0
    while problem.remaining(state) > 0:
        q = mcts_q_estimate(problem, state, config.budget, derive_seed(rng_seed, SEARCH, t), config)
        plan = greedy_selection(q) if greedy else softmax_q_proposal(q, config.c, derive_seed(rng_seed, SELECT, t))
        tr = problem.transition(state, plan.joint_action)
        states.append(state)
        actions.append(plan.joint_action)
        plans.append(plan)
        if tr.done:
            flags = tr.flags
            break
        state, t = tr.state, t + 1
    return EpisodeSample(tuple(states), tuple(actions), tuple(plans), flags)


# -------------- Highway binding --------------

@dataclass(frozen=True)
class JointState:
    t: int
    agents: Tuple[AgentState, ...]
    # des_lane, des_velocity, lane_center of the previous step per agent
    previous: Tuple[Optional[Tuple[float, float, float]], ...]


def action_template(scenario: Scenario, config) -> Tuple[Action, ...]:
    vy = scenario.road.lane_width / config.lane_change_time
    return tuple(
        Action(ax=float(ax), vy=lat, dt=scenario.dt)
        for ax in config.accel_template
        for lat in (-vy, 0.0, vy)
    )


class HighwayProblem:
    def __init__(self, scenario: Scenario, model: RewardModel, config):
        self.scenario = scenario
        self.model = model
        self.n_agents = len(scenario.agents)
        self.gamma = config.gamma
        self.jitter_std = config.jitter_std
        self._template = action_template(scenario, config)

    def root(self, starts: Sequence[AgentState]) -> JointState:
        return JointState(0, tuple(starts), (None,) * len(starts))

    def remaining(self, state: JointState) -> int:
        return self.scenario.horizon - state.t

    def actions(self, agent: int, state: JointState) -> Tuple[Action, ...]:
        return self._template

    def perturb(self, action: Action, rng: np.random.Generator) -> Optional[Action]:
        if self.jitter_std <= 0:
            return None
        return Action(ax=action.ax + float(rng.normal(0.0, self.jitter_std)), vy=action.vy, dt=action.dt)

    def transition(self, state: JointState, joint_action: Tuple[Action, ...]) -> Transition:
        sc = self.scenario
        flags = classify_step(state.agents, joint_action, sc.road, sc.obstacles, sc.vehicle)
        rewards, previous = [], []
        for i, (s, a) in enumerate(zip(state.agents, joint_action)):
            fv = feature_step(s, a, sc.agents[i], sc.road, flags[i])
            prev = state.previous[i] or fv[:3]
            rewards.append(self.model.step_reward(fv + tuple(prev)))
            previous.append(tuple(fv[:3]))
        done = any(f is not Terminal.NONE for f in flags)
        agents = state.agents if done else tuple(step(s, a) for s, a in zip(state.agents, joint_action))
        return Transition(JointState(state.t + 1, agents, tuple(previous)), tuple(rewards), done, tuple(flags))


@dataclass(frozen=True, eq=False)
class SampledBatchEntry:
    trajectory: Trajectory
    log_prob: float  # log pi_s(tau) = sum of step_log_probs
    step_log_probs: Tuple[float, ...] = ()
    distributions: Tuple[Tuple[float, ...], ...] = ()
    features: Optional[np.ndarray] = None  # (T, 10), see features.featurize
    scenario: Optional[str] = None


def generate_samples(model: RewardModel, scenario: Scenario, config, rng_seed: int,
                     greedy: bool = False) -> List[SampledBatchEntry]:
    problem = HighwayProblem(scenario, model, config)
    starts = [sample_start_state(scenario, i, derive_seed(rng_seed, START, i)) for i in range(problem.n_agents)]
    episode = sample_episode(problem, problem.root(starts), config, rng_seed, greedy=greedy)

    entries = []
    for i, spec in enumerate(scenario.agents):
        steps = tuple((js.agents[i], joint[i]) for js, joint in zip(episode.states, episode.actions))
        terminal = episode.flags[i] if episode.flags else Terminal.NONE
        traj = Trajectory(agent_id=i, start=starts[i], steps=steps, terminal=terminal,
                          dt=scenario.dt, horizon=scenario.horizon, seed=rng_seed)
        entries.append(SampledBatchEntry(
            trajectory=traj,
            log_prob=episode.log_prob(i),
            step_log_probs=episode.step_log_probs(i),
            distributions=tuple(p.selections[i].distribution for p in episode.plans),
            features=featurize(traj, spec, scenario.road) if steps else None,
            scenario=scenario.name,
        ))
    logger.debug('sampled %s seed=%d steps=%d greedy=%s', scenario.name, rng_seed, len(episode.actions), greedy)
    return entries


def plan_expert(scenario: Scenario, baseline_model: RewardModel, config, rng_seed: int) -> List[Trajectory]:
    return [e.trajectory for e in generate_samples(baseline_model, scenario, config, rng_seed, greedy=True)]
