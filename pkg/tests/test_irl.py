from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

import qirl.irl as irl
from qirl.env import rollout
from qirl.errors import ConfigError, DivergenceError
from qirl.irl import (GradientEstimate, SampleBatch, eval_seeds, evaluation_distance, expert_entries, gradient_estimate,
                      importance_mean, log_likelihood, partition_estimate, step_seeds, train)
from qirl.metrics import pooled_expert_floor
from qirl.features import N_AUGMENTED, N_FEATURES
from qirl.models import Action, AgentState, Trajectory
from qirl.planner import SampledBatchEntry
from qirl.reward import Checkpoint, LinearReward

PLACEHOLDER = Trajectory(agent_id=0, start=AgentState(0.0, 0.0, 0.0), steps=())


def _constant_batch(n, trace, log_prob=0.0):
    return SampleBatch(tuple(SampledBatchEntry(PLACEHOLDER, log_prob, features=trace) for _ in range(n)))


def test_partition_single_zero_entry():
    batch = _constant_batch(1, np.zeros((3, N_AUGMENTED)))
    assert partition_estimate(LinearReward(np.zeros(N_FEATURES)), batch) == 0.0


def test_partition_identical_entries(rng):
    trace = rng.uniform(-1, 1, (4, N_AUGMENTED))
    model = LinearReward(rng.normal(size=N_FEATURES))
    one = partition_estimate(model, _constant_batch(1, trace, -1.5))
    many = partition_estimate(model, _constant_batch(7, trace, -1.5))
    assert many == pytest.approx(one, abs=1e-12)


def test_partition_matches_enumeration(enumerable_mdp):
    rng = np.random.default_rng(0)
    mdp = enumerable_mdp(rng, n_actions=3)
    model = LinearReward(rng.uniform(-1, 1, N_FEATURES))
    estimate = partition_estimate(model, mdp.sample(20000, rng))
    assert np.exp(estimate) == pytest.approx(np.exp(mdp.exact_log_z(model)), rel=0.03)


def test_gradient_matches_enumeration(enumerable_mdp):
    rng = np.random.default_rng(1)
    mdp = enumerable_mdp(rng, n_actions=2)
    model = LinearReward(rng.uniform(-1, 1, N_FEATURES))
    expert_idx = [0, 3]
    experts = SampleBatch(tuple(mdp.entry(i) for i in expert_idx))
    est = gradient_estimate(model, experts, mdp.sample(20000, rng))
    np.testing.assert_allclose(est.gradient, mdp.exact_gradient(model, expert_idx), rtol=0.02, atol=0.02)
    assert est.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_gradient_self_consistency(rng):
    trace = rng.uniform(-1, 1, (5, N_AUGMENTED))
    batch = _constant_batch(4, trace, -2.0)
    est = gradient_estimate(LinearReward(np.zeros(N_FEATURES)), batch, batch)
    np.testing.assert_allclose(est.gradient, 0.0, atol=1e-12)
    np.testing.assert_allclose(est.weights, 0.25)
    assert est.ess == pytest.approx(4.0)


def test_log_space_safety(rng):
    traces = [np.ones((2, N_AUGMENTED)), -np.ones((2, N_AUGMENTED))]
    model = LinearReward(np.full(N_FEATURES, 1000.0 / N_FEATURES))
    entries = tuple(SampledBatchEntry(PLACEHOLDER, lp, features=t) for t in traces for lp in (-900.0, 0.0))
    batch = SampleBatch(entries)
    est = gradient_estimate(model, batch, batch)
    assert np.isfinite(est.log_z)
    assert np.all(np.isfinite(est.gradient))
    assert est.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_non_finite_return_signals_divergence(rng):
    batch = _constant_batch(2, rng.uniform(-1, 1, (3, N_AUGMENTED)))
    with pytest.raises(DivergenceError):
        gradient_estimate(LinearReward(np.full(N_FEATURES, np.inf)), batch, batch)


def test_sample_batch_invariants():
    with pytest.raises(ValueError):
        SampleBatch(())
    with pytest.raises(ValueError):
        SampleBatch((SampledBatchEntry(PLACEHOLDER, np.nan, features=np.zeros((1, N_AUGMENTED))),))
    with pytest.raises(ValueError):
        SampleBatch((SampledBatchEntry(PLACEHOLDER, 0.0),))


def test_likelihood_ascent_with_exact_gradients(enumerable_mdp):
    rng = np.random.default_rng(2)
    mdp = enumerable_mdp(rng, n_actions=3)
    model = LinearReward(rng.uniform(-1, 1, N_FEATURES))
    expert_idx = [1, 4]
    history = []
    for _ in range(50):
        history.append(mdp.exact_log_likelihood(model, expert_idx))
        model = model.with_flat(model.flat() + 1e-3 * mdp.exact_gradient(model, expert_idx))
    assert all(b >= a - 1e-12 for a, b in zip(history, history[1:]))


def test_log_likelihood_estimate(rng):
    trace = rng.uniform(-1, 1, (3, N_AUGMENTED))
    model = LinearReward(rng.normal(size=N_FEATURES))
    batch = _constant_batch(3, trace, 0.0)
    assert log_likelihood(model, batch, batch) == pytest.approx(0.0, abs=1e-12)


def test_importance_mean_examples(rng):
    x = rng.normal(size=50)
    logs = rng.normal(size=50)
    assert importance_mean(x, logs, logs) == pytest.approx(x.mean())
    # uniform q over 4 outcomes, p concentrated on two: E_q[p/q] = 1
    p_log = np.log([0.5, 0.5, 1e-300, 1e-300])
    q_log = np.log(np.full(4, 0.25))
    assert importance_mean([3.0] * 4, p_log, q_log) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        importance_mean([1.0], [0.0, 0.0], [0.0])


def test_importance_mean_shifted_normal():
    rng = np.random.default_rng(3)
    x = rng.normal(1.0, 1.0, size=100000)
    estimate = importance_mean(x, norm.logpdf(x, 0.0, 1.0), norm.logpdf(x, 1.0, 1.0))
    assert abs(estimate) < 0.05


def test_step_seeds_cover_every_scenario():
    seeds = step_seeds(0, 3, n_scenarios=2, samples_per_step=3)
    assert [s for s, _ in seeds] == [0, 1, 0, 1, 0, 1]
    assert len({seed for _, seed in seeds}) == 6
    assert step_seeds(0, 3, 2, 3) == seeds


# -------------- training loop --------------

def _experts(scenario, n=4):
    trajs = []
    for seed in range(n):
        trajs.extend(rollout(scenario, lambda t, states: [Action(0.5, 0.0, scenario.dt)], seed))
    return {scenario.name: trajs}


def test_train_zero_steps_returns_initial(tiny_scenario, fast_trainer, fast_planner):
    trainer = replace(fast_trainer, outer_steps=0)
    final, log = train([tiny_scenario], _experts(tiny_scenario), trainer, fast_planner, seed=5)
    again, _ = train([tiny_scenario], _experts(tiny_scenario), trainer, fast_planner, seed=5)
    assert final.step == 0 and log == []
    np.testing.assert_array_equal(final.model.flat(), again.model.flat())
    assert np.all(np.abs(final.model.flat()) <= 1.0)


def test_train_is_deterministic(tiny_scenario, fast_trainer, fast_planner):
    experts = _experts(tiny_scenario)
    a, log_a = train([tiny_scenario], experts, fast_trainer, fast_planner, seed=11)
    b, log_b = train([tiny_scenario], experts, fast_trainer, fast_planner, seed=11)
    assert a.step == 1 and len(log_a) == 1
    np.testing.assert_array_equal(a.model.flat(), b.model.flat())
    assert log_a == log_b
    assert log_a[0].mu_d is not None


def test_train_resume_matches_uninterrupted(tiny_scenario, fast_trainer, fast_planner):
    experts = _experts(tiny_scenario)
    two = replace(fast_trainer, outer_steps=2)
    full, full_log = train([tiny_scenario], experts, two, fast_planner, seed=3)
    half, half_log = train([tiny_scenario], experts, fast_trainer, fast_planner, seed=3)
    resumed, rest = train([tiny_scenario], experts, two, fast_planner, seed=3, start=half)
    np.testing.assert_array_equal(full.model.flat(), resumed.model.flat())
    assert half_log + rest == full_log


def test_train_requires_experts(tiny_scenario, fast_trainer, fast_planner):
    with pytest.raises(ConfigError):
        train([tiny_scenario], {}, fast_trainer, fast_planner, seed=0)


def test_train_reports_last_finite_checkpoint(tiny_scenario, fast_trainer, fast_planner, monkeypatch):
    def exploding(model, expert_batch, sample_batch, gamma=1.0):
        return GradientEstimate(np.full(N_FEATURES, np.inf), 0.0, np.ones(len(sample_batch)), 0.0)

    monkeypatch.setattr(irl, 'gradient_estimate', exploding)
    start = Checkpoint(LinearReward(np.zeros(N_FEATURES)), 0)
    with pytest.raises(DivergenceError) as info:
        train([tiny_scenario], _experts(tiny_scenario), fast_trainer, fast_planner, seed=0, start=start)
    assert info.value.last_checkpoint is start


def test_on_step_callback_sees_every_step(tiny_scenario, fast_trainer, fast_planner):
    seen = []
    train([tiny_scenario], _experts(tiny_scenario), replace(fast_trainer, outer_steps=2), fast_planner, seed=1,
          on_step=lambda ckpt, record: seen.append((ckpt.step, record.step)))
    assert seen == [(1, 0), (2, 1)]


def test_expert_entries_skip_empty(tiny_scenario):
    empty = Trajectory(0, AgentState(0.0, 1.75, 5.0), ())
    trajs = _experts(tiny_scenario, 1)[tiny_scenario.name] + [empty]
    entries = expert_entries(tiny_scenario, trajs)
    assert len(entries) == 1
    assert entries[0].scenario == 'tiny'


def test_eval_seeds_do_not_depend_on_the_step():
    seeds = eval_seeds(4, n_scenarios=2, samples=3)
    assert [s for s, _ in seeds] == [0, 1, 0, 1, 0, 1]
    assert len({seed for _, seed in seeds}) == 6
    assert not {seed for _, seed in seeds} & {seed for _, seed in step_seeds(4, 0, 2, 3)}


def test_logged_distance_uses_fixed_eval_episodes(tiny_scenario, fast_trainer, fast_planner):
    experts = _experts(tiny_scenario)
    trainer = replace(fast_trainer, outer_steps=2, eval_samples=3)
    start = Checkpoint(LinearReward(np.linspace(-1.0, 1.0, N_FEATURES)), 0)
    _, log = train([tiny_scenario], experts, trainer, fast_planner, seed=9, start=start)

    first = evaluation_distance(start.model, [tiny_scenario], experts, fast_planner, 9, 3, trainer.k)
    assert (log[0].mu_d, log[0].sigma_d) == (first.mean, first.std)
    assert len(first.per_sample) == 3
    floor = pooled_expert_floor([experts[tiny_scenario.name]], trainer.k)
    assert log[0].floor_d == log[1].floor_d == floor.mean


def test_last_step_is_always_evaluated(tiny_scenario, fast_trainer, fast_planner):
    trainer = replace(fast_trainer, outer_steps=3, eval_every=5, eval_samples=2)
    _, log = train([tiny_scenario], _experts(tiny_scenario), trainer, fast_planner, seed=2)
    assert [r.step for r in log if r.mu_d is not None] == [0, 2]
    assert log[1].mu_d is None and log[1].floor_d is None
