import itertools
import json
import os
import shutil

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.special import logsumexp

from qirl import create_cli
from qirl.config import PlannerConfig, TrainerConfig
from qirl.export import load_scenario
from qirl.features import N_AUGMENTED
from qirl.irl import SampleBatch
from qirl.models import AgentSpec, AgentState, Road, Scenario, Trajectory
from qirl.planner import SampledBatchEntry, Transition
from qirl.reward import grad_return, return_of

PACKAGED = os.path.join(os.path.dirname(__file__), '..', 'qirl', 'scenarios')


class BanditProblem:
    """One decision, fixed reward per arm."""

    def __init__(self, rewards=(1.0, 0.0)):
        self.rewards = rewards
        self.n_agents = 1
        self.gamma = 1.0

    def remaining(self, state):
        return 1 - state

    def actions(self, agent, state):
        return tuple(range(len(self.rewards)))

    def perturb(self, action, rng):
        return None

    def transition(self, state, joint_action):
        return Transition(state + 1, (self.rewards[joint_action[0]],), False)


class ChainProblem:
    """Three steps, four actions. Repeating action 3 pays 1.0, otherwise the base reward.

    State is (t, previous action). The optimum 3, 3, 3 returns 2.0; greedy
    one-step choices (0, 0, 0) return only 1.2.
    """
    BASE = (0.4, 0.3, 0.1, 0.0)
    OPTIMUM = 2.0

    def __init__(self, horizon=3):
        self.horizon = horizon
        self.n_agents = 1
        self.gamma = 1.0

    def remaining(self, state):
        return self.horizon - state[0]

    def actions(self, agent, state):
        return (0, 1, 2, 3)

    def perturb(self, action, rng):
        return None

    def reward(self, state, action):
        return 1.0 if action == 3 and state[1] == 3 else self.BASE[action]

    def transition(self, state, joint_action):
        a = joint_action[0]
        return Transition((state[0] + 1, a), (self.reward(state, a),), False)

    def value(self, actions):
        state, total = (0, None), 0.0
        for a in actions:
            total += self.reward(state, a)
            state = (state[0] + 1, a)
        return total


class TwoStepProblem:
    """Two decisions of two actions. Only the first decision pays, so the search values are exact."""
    FIRST = (1.0, 0.0)

    def __init__(self):
        self.n_agents = 1
        self.gamma = 1.0

    def remaining(self, state):
        return 2 - state[0]

    def actions(self, agent, state):
        return (0, 1)

    def perturb(self, action, rng):
        return None

    def transition(self, state, joint_action):
        a = joint_action[0]
        reward = self.FIRST[a] if state[0] == 0 else 0.0
        return Transition((state[0] + 1, state[1] + (a,)), (reward,), False)


class EnumerableMdp:
    """Every trajectory of a small tree MDP with a fixed feature trace, sampled by a known product policy."""
    PLACEHOLDER = Trajectory(agent_id=0, start=AgentState(0.0, 0.0, 0.0), steps=())

    def __init__(self, rng, n_actions=2, steps=2):
        self.paths = list(itertools.product(range(n_actions), repeat=steps))
        self.traces = [rng.uniform(-1.0, 1.0, size=(steps, N_AUGMENTED)) for _ in self.paths]
        step_p = np.linspace(2.0, 1.0, n_actions)
        step_p /= step_p.sum()
        self.log_q = np.array([np.log(step_p[list(p)]).sum() for p in self.paths])

    def entry(self, i, log_prob=None):
        return SampledBatchEntry(trajectory=self.PLACEHOLDER, features=self.traces[i],
                                 log_prob=self.log_q[i] if log_prob is None else log_prob)

    def sample(self, n, rng):
        idx = rng.choice(len(self.paths), size=n, p=np.exp(self.log_q))
        return SampleBatch(tuple(self.entry(i) for i in idx))

    def returns(self, model):
        return np.array([return_of(model, t) for t in self.traces])

    def exact_log_z(self, model):
        return float(logsumexp(self.returns(model)))

    def exact_gradient(self, model, expert_idx):
        p = np.exp(self.returns(model) - self.exact_log_z(model))
        grads = np.array([grad_return(model, t) for t in self.traces])
        return grads[expert_idx].mean(axis=0) - p @ grads

    def exact_log_likelihood(self, model, expert_idx):
        return float(self.returns(model)[expert_idx].mean() - self.exact_log_z(model))


@pytest.fixture()
def bandit():
    return BanditProblem()


@pytest.fixture()
def chain():
    return ChainProblem()


@pytest.fixture()
def two_step():
    return TwoStepProblem()


@pytest.fixture()
def road():
    return Road(lane_count=2, lane_width=4.0, length=200.0)


@pytest.fixture()
def tiny_scenario():
    """Single agent, one lane, three decisions."""
    road = Road(lane_count=1, lane_width=3.5, length=200.0)
    agent = AgentSpec(mean_x=10.0, mean_y=1.75, std_x=1.0, std_y=0.1, start_speed=8.0,
                      desired_lane=0, desired_velocity=10.0)
    return Scenario(name='tiny', road=road, agents=(agent,), horizon=3, dt=0.8)


@pytest.fixture()
def merge_scenario():
    return load_scenario(os.path.join(PACKAGED, 'merge.json'))


@pytest.fixture()
def fast_planner():
    return PlannerConfig(budget=8, c=5.0)


@pytest.fixture()
def fast_trainer():
    return TrainerConfig(model='linear', outer_steps=1, samples_per_step=1, eval_every=1, k=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def app_cli():
    return create_cli()


@pytest.fixture()
def tiny_config(tmp_path):
    """Config plus a short single-lane scenario, small enough for CLI round trips."""
    scenario = json.load(open(os.path.join(PACKAGED, 'single_lane.json'), encoding='utf-8'))
    scenario['horizon'] = 3
    with open(tmp_path / 'single_lane.json', 'w', encoding='utf-8') as f:
        json.dump(scenario, f)
    config = {
        'scenarios': ['single_lane.json'],
        'planner': {'budget': 6, 'c': 5.0},
        'trainer': {'model': 'linear', 'outer_steps': 1, 'samples_per_step': 1, 'eval_every': 1, 'k': 1},
        'experts': {'count': 3},
        'eval': {'k': 1, 'samples': 2},
        'output_dir': str(tmp_path / 'out'),
        'seed': 7,
    }
    path = tmp_path / 'tiny.json'
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config, f)
    return str(path)


@pytest.fixture()
def packaged_dir(tmp_path):
    target = tmp_path / 'configs'
    shutil.copytree(PACKAGED, target)
    return target


@pytest.fixture()
def enumerable_mdp():
    return EnumerableMdp
