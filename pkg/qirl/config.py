import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple


class Settings:
    """Environment defaults, read after ``load_dotenv()``. CLI flags and config files override them."""

    def __init__(self):
        self.OUTPUT_DIR = os.getenv('QIRL_OUTPUT_DIR', 'runs')
        self.WORKERS = int(os.getenv('QIRL_WORKERS', '1'))
        self.SEED = int(os.getenv('QIRL_SEED', '0'))
        self.LOG_LEVEL = os.getenv('QIRL_LOG_LEVEL', 'INFO')


@dataclass(frozen=True)
class PlannerConfig:
    budget: int = 2000  # MCTS iterations per decision step
    c: float = 5.0  # Softmax Q-Proposal coefficient
    gamma: float = 1.0
    uct_c: float = 1.0
    pw_k: float = 2.0
    pw_alpha: float = 0.5
    accel_template: Tuple[float, ...] = (-3.0, -1.0, 0.0, 1.0, 3.0)
    lane_change_time: float = 4.0  # seconds for a full lane width at the template lateral speed
    jitter_std: float = 0.3  # m/s^2 on ax for widened actions beyond the template


@dataclass(frozen=True)
class TrainerConfig:
    model: str = 'linear'
    hidden_dim: int = 16
    learning_rate: float = 0.0005
    outer_steps: int = 2000  # M
    samples_per_step: int = 4  # N episodes per scenario and step
    eval_every: int = 10
    # episodes per scenario behind each logged mu(d); fixed seeds from the EVAL stream
    eval_samples: int = 10
    k: int = 3


@dataclass(frozen=True)
class ExpertConfig:
    count: int = 50
    # planner budget for the greedy expert episodes; None uses planner.budget
    budget: Optional[int] = None
    # stand-in for the unpublished hand-tuned baseline: des_lane, des_velocity,
    # lane_center, acceleration, collision, invalid_state, invalid_action
    baseline_weights: Tuple[float, ...] = (1.0, 1.0, 0.5, 0.5, -10.0, -10.0, -10.0)


@dataclass(frozen=True)
class EvalConfig:
    k: int = 3
    velocity_band: float = 0.1
    samples: int = 50


@dataclass(frozen=True)
class RunConfig:
    scenarios: Tuple[str, ...]
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: Optional[str] = None
    seed: Optional[int] = None
    workers: Optional[int] = None
    # directory the config file was loaded from; scenario paths are relative to it
    base_dir: str = field(default='.', compare=False)

    def scenario_paths(self) -> Tuple[str, ...]:
        return tuple(p if os.path.isabs(p) else os.path.join(self.base_dir, p) for p in self.scenarios)

    def expert_planner(self) -> PlannerConfig:
        if self.experts.budget is None:
            return self.planner
        return replace(self.planner, budget=self.experts.budget)
