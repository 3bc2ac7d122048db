"""Guided cost learning with Softmax Q-Proposal samples.

The maximum-entropy log-likelihood gradient is

    grad L = mean_{tau in experts} grad R(tau) - sum_{tau in samples} w(tau) grad R(tau)

with self-normalised importance weights w(tau) proportional to
exp(R(tau) - log pi_s(tau)). Z is estimated from the same sample batch, so the
normalised weights equal exp(R - log pi_s - log Z_hat - log |T_s|) exactly.
Everything is computed in log-space.
"""
import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DivergenceError
from .features import featurize
from .metrics import TrajectoryDistance, pooled_expert_floor, pooled_knn_distance
from .models import Scenario, Trajectory
from .planner import SampledBatchEntry, generate_samples
from .reward import Checkpoint, RewardModel, grad_return, init_model, return_of
from .utils import EVAL, INIT, STEP, derive_seed, effective_sample_size, episode_seed, make_rng, parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    entries: Tuple[SampledBatchEntry, ...]
    model_snapshot_id: int = 0

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError('sample batch must not be empty')
        for e in entries:
            if e.features is None:
                raise ValueError(f'entry of agent {e.trajectory.agent_id} has no steps')
            if not np.isfinite(e.log_prob):
                raise ValueError('sample log-probabilities must be finite')
        object.__setattr__(self, 'entries', entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def log_probs(self) -> np.ndarray:
        return np.array([e.log_prob for e in self.entries], dtype=float)

    @property
    def trajectories(self) -> List[Trajectory]:
        return [e.trajectory for e in self.entries]

    def returns(self, model: RewardModel, gamma: float = 1.0) -> np.ndarray:
        return np.array([return_of(model, e.features, gamma) for e in self.entries], dtype=float)


@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray
    log_z: float
    weights: np.ndarray
    expert_return: float

    @property
    def log_likelihood(self) -> float:
        """Proportional log-likelihood: mean expert return minus log Z_hat."""
        return self.expert_return - self.log_z

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.gradient))

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)


@dataclass(frozen=True)
class TrainingLogRecord:
    step: int
    log_likelihood: float
    log_z: float
    grad_norm: float
    ess: float
    n_samples: int
    mu_d: Optional[float] = None
    sigma_d: Optional[float] = None
    floor_d: Optional[float] = None


def expert_entries(scenario: Scenario, trajectories: Sequence[Trajectory]) -> List[SampledBatchEntry]:
    """Expert demonstrations as batch entries; their log-probabilities are never used."""
    return [
        SampledBatchEntry(trajectory=t, log_prob=0.0,
                          features=featurize(t, scenario.agents[t.agent_id], scenario.road),
                          scenario=scenario.name)
        for t in trajectories if t.steps
    ]


def importance_mean(values: Sequence[float], p_log: Sequence[float], q_log: Sequence[float]) -> float:
    """(1/n) sum x_i p(x_i)/q(x_i) for x_i drawn from q."""
    x = np.asarray(values, dtype=float)
    p, q = np.asarray(p_log, dtype=float), np.asarray(q_log, dtype=float)
    if not (x.shape[0] == p.shape[0] == q.shape[0]):
        raise ValueError('values and log-densities must have equal lengths')
    return float(np.mean(x * np.exp(p - q)))


def partition_estimate(model: RewardModel, batch: SampleBatch, gamma: float = 1.0) -> float:
    log_w = batch.returns(model, gamma) - batch.log_probs
    return float(logsumexp(log_w) - np.log(len(batch)))


def gradient_estimate(model: RewardModel, expert_batch: SampleBatch, sample_batch: SampleBatch,
                      gamma: float = 1.0) -> GradientEstimate:
    expert_returns = expert_batch.returns(model, gamma)
    sample_returns = sample_batch.returns(model, gamma)
    if not (np.all(np.isfinite(expert_returns)) and np.all(np.isfinite(sample_returns))):
        raise DivergenceError('non-finite trajectory return; reward parameters diverged')

    log_w = sample_returns - sample_batch.log_probs
    log_total = logsumexp(log_w)
    log_z = float(log_total - np.log(len(sample_batch)))
    weights = np.exp(log_w - log_total)

    expert_grad = np.mean([grad_return(model, e.features, gamma) for e in expert_batch.entries], axis=0)
    sample_grad = np.zeros_like(expert_grad)
    for w, e in zip(weights, sample_batch.entries):
        sample_grad += w * grad_return(model, e.features, gamma)
    return GradientEstimate(expert_grad - sample_grad, log_z, weights, float(expert_returns.mean()))


def log_likelihood(model: RewardModel, expert_batch: SampleBatch, sample_batch: SampleBatch, gamma: float = 1.0) -> float:
    return float(expert_batch.returns(model, gamma).mean() - partition_estimate(model, sample_batch, gamma))


def _sample_job(model: RewardModel, planner, job: Tuple[Scenario, int]) -> List[SampledBatchEntry]:
    scenario, seed = job
    return generate_samples(model, scenario, planner, seed)


def collect_samples(model: RewardModel, scenarios: Sequence[Scenario], planner, seeds: Sequence[Tuple[int, int]],
                    workers: int = 1) -> List[SampledBatchEntry]:
    """Run one sampled episode per (scenario index, seed); output order follows ``seeds``."""
    jobs = [(scenarios[s], seed) for s, seed in seeds]
    batches = parallel_map(partial(_sample_job, model, planner), jobs, workers)
    return [e for batch in batches for e in batch if e.features is not None]


def step_seeds(seed: int, step_index: int, n_scenarios: int, samples_per_step: int) -> List[Tuple[int, int]]:
    base = derive_seed(seed, STEP, step_index)
    return [(s, derive_seed(base, s, j)) for j in range(samples_per_step) for s in range(n_scenarios)]


def eval_seeds(seed: int, n_scenarios: int, samples: int) -> List[Tuple[int, int]]:
    """The same episodes at every evaluation, so logged distances differ only through the model."""
    return [(s, episode_seed(seed, s, e, stream=EVAL)) for e in range(samples) for s in range(n_scenarios)]


def evaluation_distance(model: RewardModel, scenarios: Sequence[Scenario],
                        expert_store: Mapping[str, Sequence[Trajectory]], planner, seed: int, samples: int,
                        k: int, workers: int = 1) -> TrajectoryDistance:
    entries = collect_samples(model, scenarios, planner, eval_seeds(seed, len(scenarios), samples), workers)
    groups = [([e.trajectory for e in entries if e.scenario == sc.name], expert_store[sc.name]) for sc in scenarios]
    return pooled_knn_distance(groups, k)


def train(scenarios: Sequence[Scenario], expert_store: Mapping[str, Sequence[Trajectory]], trainer, planner,
          seed: int, workers: int = 1, start: Optional[Checkpoint] = None,
          on_step: Optional[Callable[[Checkpoint, TrainingLogRecord], None]] = None
          ) -> Tuple[Checkpoint, List[TrainingLogRecord]]:
    """Gradient ascent on the proportional log-likelihood with fresh samples every step."""
    experts: List[SampledBatchEntry] = []
    for sc in scenarios:
        if not expert_store.get(sc.name):
            raise ConfigError(f'no expert trajectories for scenario {sc.name!r}')
        experts.extend(expert_entries(sc, expert_store[sc.name]))
    expert_batch = SampleBatch(tuple(experts))
    floor = pooled_expert_floor([expert_store[sc.name] for sc in scenarios], trainer.k) if trainer.eval_every else None
    if floor is not None:
        logger.info('expert-vs-expert floor: mu_d=%.3f sigma_d=%.3f', floor.mean, floor.std)

    if start is None:
        model = init_model(trainer.model, make_rng(derive_seed(seed, INIT)), trainer.hidden_dim)
        start = Checkpoint(model, 0)
    checkpoint = start
    log: List[TrainingLogRecord] = []

    for i in range(checkpoint.step, trainer.outer_steps):
        model = checkpoint.model
        seeds = step_seeds(seed, i, len(scenarios), trainer.samples_per_step)
        batch = SampleBatch(tuple(collect_samples(model, scenarios, planner, seeds, workers)), model_snapshot_id=i)
        try:
            est = gradient_estimate(model, expert_batch, batch, planner.gamma)
        except DivergenceError as exc:
            raise DivergenceError(f'step {i}: {exc}', last_checkpoint=checkpoint) from exc

        updated = model.with_flat(model.flat() + trainer.learning_rate * est.gradient)
        if not updated.is_finite():
            raise DivergenceError(f'step {i}: parameters became non-finite (|grad|={est.norm:.3g})',
                                  last_checkpoint=checkpoint)

        mu_d = sigma_d = floor_d = None
        if trainer.eval_every and (i % trainer.eval_every == 0 or i == trainer.outer_steps - 1):
            dist = evaluation_distance(model, scenarios, expert_store, planner, seed, trainer.eval_samples,
                                       trainer.k, workers)
            mu_d, sigma_d = dist.mean, dist.std
            floor_d = floor.mean if floor is not None else None

        record = TrainingLogRecord(step=i, log_likelihood=est.log_likelihood, log_z=est.log_z,
                                   grad_norm=est.norm, ess=est.ess, n_samples=len(batch),
                                   mu_d=mu_d, sigma_d=sigma_d, floor_d=floor_d)
        logger.info('step %d: loglik=%.4f logZ=%.4f |grad|=%.4g ess=%.1f mu_d=%s',
                    i, record.log_likelihood, record.log_z, record.grad_norm, record.ess,
                    'n/a' if mu_d is None else f'{mu_d:.3f}')
        checkpoint = Checkpoint(updated, i + 1)
        log.append(record)
        if on_step is not None:
            on_step(checkpoint, record)

    return checkpoint, log
