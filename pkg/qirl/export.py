"""Readers and writers for every file the pipeline touches.

JSON loaders turn missing files, malformed JSON and schema violations into
``ConfigError``. Writers are single-pass and deterministic: the same inputs
produce byte-identical CSV and JSON-lines output.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from marshmallow import ValidationError

from .config import RunConfig
from .errors import ConfigError
from .features import AUGMENTED_NAMES, featurize
from .irl import TrainingLogRecord
from .metrics import FLOOR_COLUMNS, REPORT_COLUMNS, ScenarioReport
from .models import Action, AgentState, Scenario, Terminal, Trajectory
from .reward import LINEAR, Checkpoint, LinearReward, MlpReward
from .schemas import (SCHEMA_VERSION, CheckpointSchema, RunConfigSchema, ScenarioSchema,
                      TrajectoryHeaderSchema, TrajectoryRecordSchema)

logger = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ('step', 'log_likelihood', 'log_z', 'grad_norm', 'ess', 'n_samples', 'mu_d', 'sigma_d',
                        'floor_d')


def _read_json(path: str) -> Any:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f'{path}: file not found') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}: malformed JSON ({exc})') from exc


def _write_json(path: str, payload: Any):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
        f.write('\n')


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f'cannot create output directory {parent}: {exc}') from exc


def _load(schema, payload, path: str):
    try:
        return schema.load(payload)
    except ValidationError as exc:
        raise ConfigError(f'{path}: {exc.messages}') from exc
    except ValueError as exc:
        raise ConfigError(f'{path}: {exc}') from exc


# -------------- Scenarios and run configs --------------

def load_scenario(path: str) -> Scenario:
    return _load(ScenarioSchema(), _read_json(path), path)


def load_run_config(path: str) -> RunConfig:
    config = _load(RunConfigSchema(), _read_json(path), path)
    base_dir = os.path.dirname(os.path.abspath(path))
    config = replace(config, base_dir=base_dir)
    missing = [p for p in config.scenario_paths() if not os.path.isfile(p)]
    if missing:
        raise ConfigError(f'{path}: scenario files not found: {", ".join(missing)}')
    return config


def dump_run_config(config: RunConfig) -> Dict[str, Any]:
    return RunConfigSchema().dump(config)


def write_run_config(config: RunConfig, path: str):
    _write_json(path, dump_run_config(config))


def load_scenarios(config: RunConfig) -> List[Scenario]:
    scenarios = [load_scenario(p) for p in config.scenario_paths()]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError(f'duplicate scenario names: {names}')
    return scenarios


# -------------- Trajectory files (JSON lines) --------------

@dataclass(frozen=True)
class TrajectoryFile:
    header: Dict[str, Any]
    trajectories: Tuple[Trajectory, ...]
    episodes: Tuple[int, ...]
    log_probs: Tuple[Optional[float], ...]


def trajectory_record(trajectory: Trajectory, episode: int, log_prob: Optional[float] = None) -> Dict[str, Any]:
    s0 = trajectory.start
    return {
        'record': 'trajectory',
        'agent_id': trajectory.agent_id,
        'episode': episode,
        'seed': trajectory.seed,
        'start': [s0.x, s0.y, s0.v],
        'steps': [[s.x, s.y, s.v, a.ax, a.vy] for s, a in trajectory.steps],
        'terminal': trajectory.terminal.value,
        'log_prob': log_prob,
    }


def trajectory_from_record(record: Dict[str, Any], dt: float, horizon: int) -> Trajectory:
    x, y, v = record['start']
    start = AgentState(x, y, v)
    steps, vy_prev = [], start.vy
    for sx, sy, sv, ax, vy in record['steps']:
        # a state's lateral velocity is the one applied by the previous action
        steps.append((AgentState(sx, sy, sv, vy_prev), Action(ax, vy, dt)))
        vy_prev = vy
    return Trajectory(agent_id=record['agent_id'], start=start, steps=tuple(steps),
                      terminal=Terminal(record['terminal']), dt=dt, horizon=horizon, seed=record.get('seed'))


def write_trajectories(path: str, scenario: Scenario, source: str, seed: int,
                       records: Sequence[Dict[str, Any]]):
    header = {
        'record': 'header',
        'schema_version': SCHEMA_VERSION,
        'scenario': scenario.name,
        'source': source,
        'seed': seed,
        'count': len(records),
        'horizon': scenario.horizon,
        'dt': scenario.dt,
    }
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        for rec in [header, *records]:
            f.write(json.dumps(rec) + '\n')
    logger.debug('wrote %d records to %s', len(records), path)


def read_trajectories(path: str) -> TrajectoryFile:
    try:
        with open(path, encoding='utf-8') as f:
            lines = [json.loads(line) for line in f if line.strip()]
    except FileNotFoundError as exc:
        raise ConfigError(f'{path}: file not found') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}: malformed JSON line ({exc})') from exc
    if not lines:
        raise ConfigError(f'{path}: missing header record')

    header = _load(TrajectoryHeaderSchema(), lines[0], path)
    record_schema = TrajectoryRecordSchema()
    records = [_load(record_schema, line, path) for line in lines[1:]]
    if len(records) != header['count']:
        raise ConfigError(f'{path}: header announces {header["count"]} records, found {len(records)}')
    trajectories = tuple(trajectory_from_record(r, header['dt'], header['horizon']) for r in records)
    return TrajectoryFile(header, trajectories, tuple(r['episode'] for r in records),
                          tuple(r.get('log_prob') for r in records))


# -------------- Checkpoints --------------

def checkpoint_payload(checkpoint: Checkpoint, label: Optional[str] = None) -> Dict[str, Any]:
    model = checkpoint.model
    if model.kind == LINEAR:
        params, hidden = {'theta': model.theta.tolist()}, None
    else:
        params, hidden = {'w1': model.w1.tolist(), 'w2': model.w2.tolist()}, model.hidden_dim
    return {
        'kind': model.kind,
        'input_dim': len(model.theta) if model.kind == LINEAR else model.w1.shape[1],
        'hidden_dim': hidden,
        'params': params,
        'step': checkpoint.step,
        'label': label,
    }


def checkpoint_from_payload(payload: Dict[str, Any], path: str = '<checkpoint>') -> Checkpoint:
    data = _load(CheckpointSchema(), payload, path)
    params = data['params']
    try:
        if data['kind'] == LINEAR:
            model = LinearReward(np.asarray(params['theta'], dtype=float))
        else:
            w1 = np.asarray(params['w1'], dtype=float)
            if w1.shape[0] != data['hidden_dim']:
                raise ValueError(f'w1 has {w1.shape[0]} rows, hidden_dim is {data["hidden_dim"]}')
            model = MlpReward(w1, np.asarray(params['w2'], dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'{path}: invalid parameters ({exc})') from exc
    if not model.is_finite():
        raise ConfigError(f'{path}: non-finite parameters')
    return Checkpoint(model, data['step'])


def save_checkpoint(path: str, checkpoint: Checkpoint, label: Optional[str] = None):
    _write_json(path, checkpoint_payload(checkpoint, label))


def load_checkpoint(path: str) -> Checkpoint:
    return checkpoint_from_payload(_read_json(path), path)


# -------------- CSV --------------

def _fmt(value) -> str:
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_training_log(path: str, records: Sequence[TrainingLogRecord]):
    _write_csv(path, TRAINING_LOG_COLUMNS, ([getattr(r, c) for c in TRAINING_LOG_COLUMNS] for r in records))


def append_training_log(path: str, record: TrainingLogRecord):
    with open(path, 'a', encoding='utf-8', newline='') as f:
        csv.writer(f, lineterminator='\n').writerow([_fmt(getattr(record, c)) for c in TRAINING_LOG_COLUMNS])


def read_training_log(path: str) -> List[TrainingLogRecord]:
    def opt(value: Optional[str]) -> Optional[float]:
        return float(value) if value else None

    try:
        with open(path, encoding='utf-8', newline='') as f:
            return [
                TrainingLogRecord(step=int(row['step']), log_likelihood=float(row['log_likelihood']),
                                  log_z=float(row['log_z']), grad_norm=float(row['grad_norm']),
                                  ess=float(row['ess']), n_samples=int(row['n_samples']),
                                  mu_d=opt(row['mu_d']), sigma_d=opt(row['sigma_d']),
                                  floor_d=opt(row.get('floor_d')))
                for row in csv.DictReader(f)
            ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f'{path}: unreadable training log ({exc})') from exc


def write_report(path: str, reports: Sequence[Tuple[str, ScenarioReport]]):
    """One row per (scenario, model), followed by any mean rows the caller appended."""
    rows = [[r.scenario, label, *[r.values()[c] for c in REPORT_COLUMNS], *[r.floor_values()[c] for c in FLOOR_COLUMNS]]
            for label, r in reports]
    _write_csv(path, ('scenario', 'model') + REPORT_COLUMNS + FLOOR_COLUMNS, rows)


def write_delta_report(path: str, reports: Sequence[Tuple[str, ScenarioReport]]):
    rows = [[r.scenario, label, *[r.deltas[c] for c in REPORT_COLUMNS]] for label, r in reports if r.deltas]
    _write_csv(path, ('scenario', 'model') + REPORT_COLUMNS, rows)


def write_curves(path: str, curves: Dict[str, Sequence[Tuple[int, float, float]]]):
    _write_csv(path, ('model', 'step', 'mu_d', 'sigma_d'),
               ([label, *point] for label, curve in curves.items() for point in curve))


def write_features(path: str, trajectories: Sequence[Trajectory], scenario: Scenario):
    rows = []
    for n, traj in enumerate(trajectories):
        if not traj.steps:
            continue
        trace = featurize(traj, scenario.agents[traj.agent_id], scenario.road)
        for t, values in enumerate(trace):
            rows.append([n, traj.agent_id, t, *[float(v) for v in values]])
    _write_csv(path, ('trajectory', 'agent_id', 't') + AUGMENTED_NAMES, rows)


# -------------- Charts and PDF --------------

def curve_drawing(curves: Dict[str, Sequence[Tuple[int, float, float]]], title: str = 'kNN distance to experts'):
    """All curves on one pair of axes, one colour and legend entry per model."""
    from reportlab.graphics.charts.lineplots import LinePlot
    from reportlab.graphics.shapes import Drawing, String
    from reportlab.lib import colors

    palette = [colors.HexColor('#1f77b4'), colors.HexColor('#ff7f0e'), colors.HexColor('#2ca02c'), colors.HexColor('#d62728')]
    drawing = Drawing(440, 300)
    drawing.add(String(220, 280, title, textAnchor='middle', fontName='Helvetica-Bold', fontSize=12))
    series = [(label, [(float(s), float(m)) for s, m, _ in curve]) for label, curve in curves.items() if curve]
    if not series:
        drawing.add(String(220, 150, 'no evaluation snapshots', textAnchor='middle', fontName='Helvetica', fontSize=10))
        return drawing
    xs = [x for _, pts in series for x, _ in pts]
    ys = [y for _, pts in series for _, y in pts]
    lp = LinePlot()
    lp.x, lp.y, lp.width, lp.height = 40, 40, 320, 210
    lp.data = [pts for _, pts in series]
    lp.xValueAxis.valueMin = min(xs)
    lp.xValueAxis.valueMax = max(xs) if max(xs) > min(xs) else min(xs) + 1
    lp.yValueAxis.valueMin = 0
    lp.yValueAxis.valueMax = max(ys) * 1.1 if max(ys) > 0 else 1.0
    for i, (label, _) in enumerate(series):
        lp.lines[i].strokeColor = palette[i % len(palette)]
        lp.lines[i].strokeWidth = 1.5
        drawing.add(String(372, 240 - 14 * i, label, fontName='Helvetica', fontSize=9,
                           fillColor=palette[i % len(palette)]))
    drawing.add(lp)
    drawing.add(String(200, 10, 'gradient step', textAnchor='middle', fontName='Helvetica', fontSize=9))
    return drawing


def write_curve_svg(path: str, curves: Dict[str, Sequence[Tuple[int, float, float]]], title: str = 'kNN distance to experts'):
    from reportlab.graphics import renderSVG

    _ensure_parent(path)
    renderSVG.drawToFile(curve_drawing(curves, title), path)


def write_report_pdf(path: str, reports: Sequence[Tuple[str, ScenarioReport]], title: str = 'Evaluation report',
                     notes: Sequence[str] = (), curves: Optional[Dict[str, Sequence[Tuple[int, float, float]]]] = None):
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.styles import getSampleStyleSheet
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

    _ensure_parent(path)
    doc = SimpleDocTemplate(path, pagesize=A4, title=title, invariant=1)
    styles = getSampleStyleSheet()
    story = [Paragraph(f'<b>{title}</b>', styles['Title'])]
    for line in notes:
        story.append(Paragraph(line, styles['Normal']))
    story.append(Spacer(1, 12))

    data = [['Scenario', 'Model', 'Collision', 'Invalid', 'l_des', 'v_des', 'mu(d) [m]', 'sigma(d) [m]', 'floor [m]']]
    for label, r in reports:
        values = r.values()
        floor = '' if r.floor is None else f'{r.floor.mean:.3f}'
        data.append([r.scenario, label, *[f'{values[c]:.3f}' for c in REPORT_COLUMNS], floor])
        if r.deltas:
            data.append(['', 'delta vs baseline', *[f'{r.deltas[c]:+.3f}' for c in REPORT_COLUMNS], ''])
    t = Table(data, repeatRows=1)
    t.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
        ('GRID', (0, 0), (-1, -1), 0.25, colors.grey),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ]))
    story.append(t)
    if curves:
        story.append(Spacer(1, 18))
        story.append(curve_drawing(curves))
    doc.build(story)
