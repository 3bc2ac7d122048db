import functools
import logging
import os
import shutil
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from .config import RunConfig, Settings
from .errors import ConfigError, DivergenceError
from .export import (append_training_log, load_checkpoint, load_run_config, load_scenario, load_scenarios,
                     read_training_log, read_trajectories, save_checkpoint, trajectory_record, write_curve_svg,
                     write_curves, write_delta_report, write_features, write_report, write_report_pdf,
                     write_training_log, write_trajectories)
from .irl import train
from .metrics import ScenarioReport, convergence_curve, scenario_report, with_mean_rows
from .models import Scenario, Trajectory
from .planner import SampledBatchEntry, generate_samples
from .reward import Checkpoint, LinearReward, RewardModel
from .utils import EVAL, episode_seed, parallel_map

logger = logging.getLogger(__name__)

PACKAGED_SCENARIOS = os.path.join(os.path.dirname(__file__), 'scenarios')
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


@dataclass(frozen=True)
class Run:
    config: RunConfig
    scenarios: Tuple[Scenario, ...]
    seed: int
    workers: int
    out: str

    def path(self, *parts: str) -> str:
        return os.path.join(self.out, *parts)

    def expert_path(self, scenario: Scenario) -> str:
        return self.path('experts', f'{scenario.name}.jsonl')


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f'Configuration error: {exc}', err=True)
            sys.exit(EXIT_CONFIG)
        except DivergenceError as exc:
            click.echo(f'Training diverged: {exc}', err=True)
            sys.exit(EXIT_DIVERGENCE)
    return wrapper


def run_options(fn):
    options = [
        click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                     help='Run configuration JSON.'),
        click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None, help='Master seed.'),
        click.option('--workers', type=click.IntRange(min=1), default=None, help='Parallel episode workers.'),
        click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None, help='Output directory.'),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def resolve_run(settings: Settings, config_path: str, seed: Optional[int], workers: Optional[int],
                out_dir: Optional[str]) -> Run:
    """CLI flag > config file > environment default."""
    config = load_run_config(config_path)

    def pick(flag, from_file, from_env):
        if flag is not None:
            return flag
        return from_file if from_file is not None else from_env

    return Run(
        config=config,
        scenarios=tuple(load_scenarios(config)),
        seed=pick(seed, config.seed, settings.SEED),
        workers=pick(workers, config.workers, settings.WORKERS),
        out=pick(out_dir, config.output_dir, settings.OUTPUT_DIR),
    )


def _episode_job(model: RewardModel, scenario: Scenario, planner, greedy: bool, seed: int) -> List[SampledBatchEntry]:
    return generate_samples(model, scenario, planner, seed, greedy=greedy)


def run_episodes(model: RewardModel, scenario: Scenario, planner, seeds: Sequence[int], workers: int,
                 greedy: bool = False) -> List[List[SampledBatchEntry]]:
    job = functools.partial(_episode_job, model, scenario, planner, greedy)
    return parallel_map(job, seeds, workers)


def baseline_model(config: RunConfig) -> LinearReward:
    return LinearReward(np.asarray(config.experts.baseline_weights, dtype=float))


def load_experts(run: Run) -> Dict[str, Tuple[Trajectory, ...]]:
    experts = {}
    for sc in run.scenarios:
        path = run.expert_path(sc)
        if not os.path.isfile(path):
            raise ConfigError(f'no expert file for scenario {sc.name!r} at {path}; run gen-experts first')
        experts[sc.name] = read_trajectories(path).trajectories
    return experts


# -------------- Commands --------------

@click.group()
@click.option('--log-level', default=None, type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
@click.pass_context
def cli(ctx, log_level):
    """Softmax Q-IRL pipeline: expert generation, training and evaluation."""
    settings = ctx.ensure_object(Settings)
    level = (log_level or settings.LOG_LEVEL).upper()
    logging.basicConfig(format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logging.getLogger('qirl').setLevel(level)


@click.command('init')
@click.argument('directory', default='.', type=click.Path(file_okay=False))
@click.option('--force', is_flag=True, help='Overwrite existing files.')
def init_command(directory, force):
    """Write the example scenarios and run configs into DIRECTORY."""
    os.makedirs(directory, exist_ok=True)
    written = 0
    for name in sorted(os.listdir(PACKAGED_SCENARIOS)):
        if not name.endswith('.json'):
            continue
        target = os.path.join(directory, name)
        if os.path.exists(target) and not force:
            click.echo(f'Skipping {target} (exists).')
            continue
        shutil.copyfile(os.path.join(PACKAGED_SCENARIOS, name), target)
        written += 1
    click.echo(f'Wrote {written} files to {directory}.')


@click.command('gen-experts')
@run_options
@click.pass_obj
@_exit_codes
def gen_experts_command(settings, config_path, seed, workers, out_dir):
    """Plan expert trajectories with the baseline reward weights."""
    run = resolve_run(settings, config_path, seed, workers, out_dir)
    cfg = run.config
    baseline = baseline_model(cfg)
    for s, sc in enumerate(run.scenarios):
        seeds = [episode_seed(run.seed, s, e) for e in range(cfg.experts.count)]
        episodes = run_episodes(baseline, sc, cfg.expert_planner(), seeds, run.workers, greedy=True)
        records = [trajectory_record(entry.trajectory, e, entry.log_prob)
                   for e, batch in enumerate(episodes) for entry in batch]
        write_trajectories(run.expert_path(sc), sc, 'expert', run.seed, records)
        click.echo(f'{sc.name}: {len(records)} expert trajectories -> {run.expert_path(sc)}')
    save_checkpoint(run.path('checkpoints', 'baseline.json'), Checkpoint(baseline, 0), label='baseline')


@click.command('train')
@run_options
@click.option('--resume/--no-resume', default=True, help='Continue from checkpoints/latest.json when present.')
@click.pass_obj
@_exit_codes
def train_command(settings, config_path, seed, workers, out_dir, resume):
    """Learn reward parameters from the expert trajectories."""
    run = resolve_run(settings, config_path, seed, workers, out_dir)
    cfg = run.config
    experts = load_experts(run)
    latest, log_path = run.path('checkpoints', 'latest.json'), run.path('training_log.csv')

    start, log = None, []
    if resume and os.path.isfile(latest) and os.path.isfile(log_path):
        start = load_checkpoint(latest)
        if start.model.kind != cfg.trainer.model:
            raise ConfigError(f'{latest} holds a {start.model.kind} model, config asks for {cfg.trainer.model}')
        log = [r for r in read_training_log(log_path) if r.step < start.step]
        click.echo(f'Resuming from step {start.step}.')
    write_training_log(log_path, log)

    def on_step(checkpoint: Checkpoint, record):
        # the log row goes first; resume drops rows at or past the checkpoint step
        log.append(record)
        append_training_log(log_path, record)
        save_checkpoint(latest, checkpoint, label='latest')

    try:
        final, _ = train(run.scenarios, experts, cfg.trainer, cfg.planner, run.seed,
                         workers=run.workers, start=start, on_step=on_step)
    except DivergenceError as exc:
        if exc.last_checkpoint is not None:
            save_checkpoint(run.path('checkpoints', 'last_finite.json'), exc.last_checkpoint, label='last_finite')
        logger.error('aborting: %s', exc)
        raise

    save_checkpoint(run.path('checkpoints', 'final.json'), final, label='final')
    curve = convergence_curve(log)
    write_curves(run.path('convergence.csv'), {cfg.trainer.model: curve})
    write_curve_svg(run.path('convergence.svg'), {cfg.trainer.model: curve})
    click.echo(f'Trained {final.step} steps; checkpoint -> {run.path("checkpoints", "final.json")}')


def evaluate(run: Run, model: RewardModel, experts: Dict[str, Sequence[Trajectory]],
             baseline_reports: Optional[Dict[str, ScenarioReport]] = None) -> Dict[str, ScenarioReport]:
    cfg = run.config
    reports = {}
    for s, sc in enumerate(run.scenarios):
        seeds = [episode_seed(run.seed, s, e, stream=EVAL) for e in range(cfg.eval.samples)]
        samples = [entry.trajectory for batch in run_episodes(model, sc, cfg.planner, seeds, run.workers)
                   for entry in batch]
        baseline = baseline_reports.get(sc.name) if baseline_reports else None
        reports[sc.name] = scenario_report(samples, experts[sc.name], sc, cfg.eval, baseline=baseline)
    return reports


@dataclass(frozen=True)
class Candidate:
    label: str
    checkpoint: Checkpoint
    path: str

    def training_log_path(self) -> str:
        # <run dir>/checkpoints/<name>.json sits next to <run dir>/training_log.csv
        return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(self.path))), 'training_log.csv')


def load_candidates(specs: Sequence[str], default_path: str, reserved: Sequence[str] = ()) -> List[Candidate]:
    """Parse ``[LABEL=]PATH`` values; the label defaults to the model kind."""
    candidates, seen = [], set(reserved)
    for spec in specs or (default_path,):
        label, sep, path = spec.partition('=')
        if not sep:
            label, path = '', spec
        checkpoint = load_checkpoint(path)
        label = label or checkpoint.model.kind
        if label in seen:
            raise ConfigError(f'duplicate checkpoint label {label!r}; name them with LABEL=PATH')
        seen.add(label)
        candidates.append(Candidate(label, checkpoint, path))
    return candidates


@click.command('eval')
@run_options
@click.option('--checkpoint', 'checkpoint_specs', multiple=True, metavar='[LABEL=]PATH',
              help='Checkpoint to evaluate, repeat to compare several. Defaults to <out>/checkpoints/final.json.')
@click.option('--baseline', 'baseline_path', type=click.Path(dir_okay=False), default=None,
              help='Baseline checkpoint for the delta report.')
@click.pass_obj
@_exit_codes
def eval_command(settings, config_path, seed, workers, out_dir, checkpoint_specs, baseline_path):
    """Sample fresh trajectories and compare them with the experts."""
    run = resolve_run(settings, config_path, seed, workers, out_dir)
    candidates = load_candidates(checkpoint_specs, run.path('checkpoints', 'final.json'),
                                 reserved=('baseline',) if baseline_path else ())
    experts = load_experts(run)

    baseline_reports = None
    if baseline_path:
        baseline_reports = evaluate(run, load_checkpoint(baseline_path).model, experts)
    reports = {c.label: evaluate(run, c.checkpoint.model, experts, baseline_reports) for c in candidates}
    rows: List[Tuple[str, ScenarioReport]] = []
    for sc in run.scenarios:
        if baseline_reports:
            rows.append(('baseline', baseline_reports[sc.name]))
        rows.extend((c.label, reports[c.label][sc.name]) for c in candidates)
    rows = with_mean_rows(rows)

    curves = {}
    for c in candidates:
        if os.path.isfile(c.training_log_path()):
            curves[c.label] = convergence_curve(read_training_log(c.training_log_path()))
    if curves:
        write_curves(run.path('convergence.csv'), curves)
        write_curve_svg(run.path('convergence.svg'), curves)

    write_report(run.path('report.csv'), rows)
    if baseline_reports:
        write_delta_report(run.path('report_deltas.csv'), [r for r in rows if r[0] != 'baseline'])
    notes = [f'{c.label}: {c.path}, step {c.checkpoint.step}' for c in candidates] + [f'Seed {run.seed}']
    write_report_pdf(run.path('report.pdf'), rows, notes=notes, curves=curves)

    for label, r in rows:
        v = r.values()
        floor = 'n/a' if r.floor is None else f'{r.floor.mean:.2f}'
        click.echo(f'{r.scenario:<14} {label:<9} collision={v["collision"]:.2f} invalid={v["invalid"]:.2f} '
                   f'l_des={v["desired_lane"]:.2f} v_des={v["desired_velocity"]:.2f} '
                   f'mu_d={v["mu_d"]:.2f} sigma_d={v["sigma_d"]:.2f} floor={floor}')


@click.command('inspect')
@click.argument('path', type=click.Path(dir_okay=False))
@click.option('--features', 'features_path', type=click.Path(dir_okay=False), default=None,
              help='Write the per-step feature table to this CSV.')
@click.option('--scenario', 'scenario_path', type=click.Path(dir_okay=False), default=None,
              help='Scenario file; needed for --features.')
@_exit_codes
def inspect_command(path, features_path, scenario_path):
    """Pretty-print a trajectory file."""
    data = read_trajectories(path)
    h = data.header
    click.echo(f'{h["source"]} trajectories for {h["scenario"]}: {h["count"]} records, '
               f'horizon {h["horizon"]} x {h["dt"]}s, seed {h["seed"]}')
    for traj, episode, log_prob in zip(data.trajectories, data.episodes, data.log_probs):
        lp = 'n/a' if log_prob is None else f'{log_prob:.4f}'
        click.echo(f'\nepisode {episode} agent {traj.agent_id}: {len(traj)} steps, '
                   f'terminal={traj.terminal.value}, log_prob={lp}')
        click.echo(f'{"t":>3} {"x":>9} {"y":>7} {"v":>7} {"ax":>7} {"vy":>7}')
        for t, (s, a) in enumerate(traj.steps):
            click.echo(f'{t:>3} {s.x:>9.2f} {s.y:>7.2f} {s.v:>7.2f} {a.ax:>7.2f} {a.vy:>7.2f}')

    if features_path:
        if not scenario_path:
            raise ConfigError('--features needs --scenario')
        scenario = load_scenario(scenario_path)
        if scenario.name != h['scenario']:
            raise ConfigError(f'{path} holds {h["scenario"]!r} trajectories, scenario file is {scenario.name!r}')
        write_features(features_path, data.trajectories, scenario)
        click.echo(f'\nFeatures -> {features_path}')


def register_commands(group: click.Group):
    for command in (init_command, gen_experts_command, train_command, eval_command, inspect_command):
        group.add_command(command)
