"""Linear and two-layer reward models over (augmented) per-step features.

A trajectory enters this module in featurised form, a (T, 10) matrix from
``features.featurize``; the linear model reads its first 7 columns. Returns
are length-normalised: G = sum_t gamma^t r_t / T.
Gradients are flat vectors in the order of ``model.flat()``.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .errors import DimensionError, EmptyTrajectoryError
from .features import N_AUGMENTED, N_FEATURES

LINEAR = 'linear'
MLP = 'mlp'
DEFAULT_HIDDEN_DIM = 16


class RewardModel(ABC):
    kind: str

    @abstractmethod
    def flat(self) -> np.ndarray:
        ...

    @abstractmethod
    def with_flat(self, vector: np.ndarray) -> 'RewardModel':
        ...

    @abstractmethod
    def unflatten(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        ...

    @abstractmethod
    def step_reward(self, features: Sequence[float]) -> float:
        """Reward of one step from its augmented feature values."""

    @abstractmethod
    def rewards(self, trace: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def weighted_gradient(self, trace: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_t weights[t] * grad r_t, flattened."""

    @property
    def n_params(self) -> int:
        return int(self.flat().size)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


@dataclass(frozen=True, eq=False)
class LinearReward(RewardModel):
    theta: np.ndarray
    kind: str = field(default=LINEAR, init=False)
    _coef: tuple = field(default=(), init=False, repr=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (N_FEATURES,):
            raise DimensionError(f'linear weights must have shape ({N_FEATURES},), got {theta.shape}')
        object.__setattr__(self, 'theta', theta)
        object.__setattr__(self, '_coef', tuple(float(t) for t in theta))

    def flat(self) -> np.ndarray:
        return self.theta.copy()

    def with_flat(self, vector: np.ndarray) -> 'LinearReward':
        return LinearReward(np.asarray(vector, dtype=float).reshape(N_FEATURES))

    def unflatten(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        return {'theta': np.asarray(vector, dtype=float).reshape(N_FEATURES)}

    def step_reward(self, features: Sequence[float]) -> float:
        return sum(c * f for c, f in zip(self._coef, features))

    def rewards(self, trace: np.ndarray) -> np.ndarray:
        return _check_trace(trace)[:, :N_FEATURES] @ self.theta

    def weighted_gradient(self, trace: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return weights @ _check_trace(trace)[:, :N_FEATURES]


@dataclass(frozen=True, eq=False)
class MlpReward(RewardModel):
    w1: np.ndarray  # (hidden_dim, 10)
    w2: np.ndarray  # (1, hidden_dim)
    kind: str = field(default=MLP, init=False)

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float).reshape(1, -1)
        if w1.ndim != 2 or w1.shape[1] != N_AUGMENTED or w1.shape[0] < 1:
            raise DimensionError(f'W1 must have shape (hidden_dim, {N_AUGMENTED}), got {w1.shape}')
        if w2.shape[1] != w1.shape[0]:
            raise DimensionError(f'W2 must have shape (1, {w1.shape[0]}), got {w2.shape}')
        object.__setattr__(self, 'w1', w1)
        object.__setattr__(self, 'w2', w2)

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def unflatten(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        vector = np.asarray(vector, dtype=float)
        split = self.w1.size
        if vector.size != split + self.w2.size:
            raise DimensionError(f'expected {split + self.w2.size} parameters, got {vector.size}')
        return {'w1': vector[:split].reshape(self.w1.shape), 'w2': vector[split:].reshape(self.w2.shape)}

    def with_flat(self, vector: np.ndarray) -> 'MlpReward':
        parts = self.unflatten(vector)
        return MlpReward(parts['w1'], parts['w2'])

    def step_reward(self, features: Sequence[float]) -> float:
        return reward_mlp(self, features)

    def rewards(self, trace: np.ndarray) -> np.ndarray:
        hidden = _check_trace(trace) @ self.w1.T
        return np.maximum(hidden, 0.0) @ self.w2[0]

    def weighted_gradient(self, trace: np.ndarray, weights: np.ndarray) -> np.ndarray:
        trace = _check_trace(trace)
        hidden = trace @ self.w1.T
        # subgradient of ReLU at exactly 0 is 0
        active = (hidden > 0.0).astype(float)
        grad_w2 = weights @ (hidden * active)
        grad_w1 = ((weights[:, None] * active) * self.w2[0]).T @ trace
        return np.concatenate([grad_w1.ravel(), grad_w2.ravel()])


def _check_trace(trace: np.ndarray) -> np.ndarray:
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 2 or trace.shape[1] != N_AUGMENTED:
        raise DimensionError(f'feature trace must have shape (T, {N_AUGMENTED}), got {trace.shape}')
    if trace.shape[0] == 0:
        raise EmptyTrajectoryError('empty feature trace')
    return trace


def reward_linear(params, feature_vector: Sequence[float]) -> float:
    theta = params.theta if isinstance(params, LinearReward) else np.asarray(params, dtype=float)
    phi = np.asarray(feature_vector, dtype=float)
    if theta.shape != phi.shape:
        raise DimensionError(f'weights {theta.shape} do not match features {phi.shape}')
    return float(theta @ phi)


def reward_mlp(params: MlpReward, augmented_feature_vector: Sequence[float]) -> float:
    x = np.asarray(augmented_feature_vector, dtype=float)
    if x.shape != (N_AUGMENTED,):
        raise DimensionError(f'network input must have {N_AUGMENTED} entries, got {x.shape}')
    return float(params.w2[0] @ np.maximum(params.w1 @ x, 0.0))


def discount_weights(length: int, gamma: float = 1.0) -> np.ndarray:
    return gamma ** np.arange(length, dtype=float) / length


def return_of(model: RewardModel, trace: np.ndarray, gamma: float = 1.0) -> float:
    r = model.rewards(trace)
    return float(discount_weights(len(r), gamma) @ r)


def grad_return(model: RewardModel, trace: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    trace = _check_trace(trace)
    return model.weighted_gradient(trace, discount_weights(trace.shape[0], gamma))


def init_model(kind: str, rng: np.random.Generator, hidden_dim: int = DEFAULT_HIDDEN_DIM) -> RewardModel:
    if kind == LINEAR:
        return LinearReward(rng.uniform(-1.0, 1.0, size=N_FEATURES))
    if kind == MLP:
        b1 = 1.0 / np.sqrt(N_AUGMENTED)
        b2 = 1.0 / np.sqrt(hidden_dim)
        w1 = rng.uniform(-b1, b1, size=(hidden_dim, N_AUGMENTED))
        w2 = rng.uniform(-b2, b2, size=(1, hidden_dim))
        return MlpReward(w1, w2)
    raise ValueError(f'unknown reward model kind: {kind}')


@dataclass(frozen=True, eq=False)
class Checkpoint:
    model: RewardModel
    step: int = 0
