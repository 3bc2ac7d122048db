import csv
import json
import os

import pytest

import qirl.cli
from qirl.cli import PACKAGED_SCENARIOS
from qirl.errors import DivergenceError
from qirl.export import load_checkpoint, read_training_log, read_trajectories
from qirl.metrics import FLOOR_COLUMNS, REPORT_COLUMNS


def _out(tiny_config):
    return os.path.join(os.path.dirname(tiny_config), 'out')


def _invoke(runner, app_cli, *args):
    return runner.invoke(app_cli, list(args), catch_exceptions=False)


def test_init_writes_examples(runner, app_cli, tmp_path):
    target = str(tmp_path / 'configs')
    result = _invoke(runner, app_cli, 'init', target)
    assert result.exit_code == 0
    assert sorted(os.listdir(target)) == sorted(n for n in os.listdir(PACKAGED_SCENARIOS) if n.endswith('.json'))
    assert {'desk.json', 'suite.json', 'merge.json', 'yield_merge.json'} <= set(os.listdir(target))
    again = _invoke(runner, app_cli, 'init', target)
    assert 'Wrote 0 files' in again.output


def test_gen_experts(runner, app_cli, tiny_config):
    result = _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    assert result.exit_code == 0, result.output
    path = os.path.join(_out(tiny_config), 'experts', 'single_lane.jsonl')
    data = read_trajectories(path)
    assert data.header['source'] == 'expert'
    assert data.header['seed'] == 7
    assert len(data.trajectories) == 3
    assert load_checkpoint(os.path.join(_out(tiny_config), 'checkpoints', 'baseline.json')).step == 0

    first = open(path, 'rb').read()
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    assert open(path, 'rb').read() == first


def test_gen_experts_seed_flag_changes_output(runner, app_cli, tiny_config, tmp_path):
    other = str(tmp_path / 'other')
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config, '--seed', '8', '--out', other)
    a = read_trajectories(os.path.join(_out(tiny_config), 'experts', 'single_lane.jsonl'))
    b = read_trajectories(os.path.join(other, 'experts', 'single_lane.jsonl'))
    assert b.header['seed'] == 8
    assert a.trajectories != b.trajectories


def test_train_and_eval(runner, app_cli, tiny_config):
    out = _out(tiny_config)
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    result = _invoke(runner, app_cli, 'train', '--config', tiny_config)
    assert result.exit_code == 0, result.output
    assert load_checkpoint(os.path.join(out, 'checkpoints', 'final.json')).step == 1
    log = read_training_log(os.path.join(out, 'training_log.csv'))
    assert [r.step for r in log] == [0]
    assert os.path.isfile(os.path.join(out, 'convergence.svg'))

    result = _invoke(runner, app_cli, 'eval', '--config', tiny_config)
    assert result.exit_code == 0, result.output
    assert 'single_lane' in result.output
    with open(os.path.join(out, 'report.csv'), encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [r['model'] for r in rows] == ['linear']
    assert os.path.isfile(os.path.join(out, 'report.pdf'))


def test_train_resumes_from_latest(runner, app_cli, tiny_config):
    out = _out(tiny_config)
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    _invoke(runner, app_cli, 'train', '--config', tiny_config)
    result = _invoke(runner, app_cli, 'train', '--config', tiny_config)
    assert 'Resuming from step 1' in result.output
    assert load_checkpoint(os.path.join(out, 'checkpoints', 'final.json')).step == 1
    assert [r.step for r in read_training_log(os.path.join(out, 'training_log.csv'))] == [0]


def test_eval_against_itself_has_zero_deltas(runner, app_cli, tiny_config):
    out = _out(tiny_config)
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    baseline = os.path.join(out, 'checkpoints', 'baseline.json')
    result = _invoke(runner, app_cli, 'eval', '--config', tiny_config, '--checkpoint', baseline, '--baseline', baseline)
    assert result.exit_code == 0, result.output
    with open(os.path.join(out, 'report_deltas.csv'), encoding='utf-8', newline='') as f:
        (row,) = list(csv.DictReader(f))
    assert all(float(row[c]) == 0.0 for c in REPORT_COLUMNS)


def test_missing_config_exits_2(runner, app_cli, tmp_path):
    result = runner.invoke(app_cli, ['gen-experts', '--config', str(tmp_path / 'nope.json')])
    assert result.exit_code == 2
    assert 'Configuration error' in result.output


def test_train_without_experts_exits_2(runner, app_cli, tiny_config):
    result = runner.invoke(app_cli, ['train', '--config', tiny_config])
    assert result.exit_code == 2
    assert 'gen-experts' in result.output


def test_divergence_exits_3(runner, app_cli, tiny_config, monkeypatch):
    def diverging(*args, **kwargs):
        raise DivergenceError('non-finite gradient at step 0')

    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    monkeypatch.setattr(qirl.cli, 'train', diverging)
    result = runner.invoke(app_cli, ['train', '--config', tiny_config])
    assert result.exit_code == 3
    assert 'Training diverged' in result.output


def test_inspect(runner, app_cli, tiny_config, tmp_path):
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    path = os.path.join(_out(tiny_config), 'experts', 'single_lane.jsonl')
    result = _invoke(runner, app_cli, 'inspect', path)
    assert result.exit_code == 0
    assert 'expert trajectories for single_lane: 3 records' in result.output

    features = str(tmp_path / 'features.csv')
    scenario = os.path.join(os.path.dirname(tiny_config), 'single_lane.json')
    result = _invoke(runner, app_cli, 'inspect', path, '--features', features, '--scenario', scenario)
    assert result.exit_code == 0
    with open(features, encoding='utf-8', newline='') as f:
        header = next(csv.reader(f))
    assert header[:4] == ['trajectory', 'agent_id', 't', 'des_lane']


@pytest.mark.parametrize('args', [['--features', 'x.csv'], []])
def test_inspect_rejects_bad_input(runner, app_cli, tmp_path, args):
    path = tmp_path / 'broken.jsonl'
    path.write_text('not json\n', encoding='utf-8')
    result = runner.invoke(app_cli, ['inspect', str(path), *args])
    assert result.exit_code == 2


def _pipeline(runner, app_cli, tiny_config, out):
    for command in ('gen-experts', 'train', 'eval'):
        result = _invoke(runner, app_cli, command, '--config', tiny_config, '--out', out)
        assert result.exit_code == 0, result.output
    names = ('training_log.csv', 'convergence.csv', 'report.csv', os.path.join('experts', 'single_lane.jsonl'))
    return {name: open(os.path.join(out, name), 'rb').read() for name in names}


def test_pipeline_is_byte_identical(runner, app_cli, tiny_config, tmp_path):
    first = _pipeline(runner, app_cli, tiny_config, str(tmp_path / 'a'))
    second = _pipeline(runner, app_cli, tiny_config, str(tmp_path / 'b'))
    assert first == second


def test_eval_report_has_floor(runner, app_cli, tiny_config):
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    _invoke(runner, app_cli, 'train', '--config', tiny_config)
    result = _invoke(runner, app_cli, 'eval', '--config', tiny_config)
    assert 'floor=' in result.output
    with open(os.path.join(_out(tiny_config), 'report.csv'), encoding='utf-8', newline='') as f:
        (row,) = list(csv.DictReader(f))
    assert all(row[c] != '' for c in FLOOR_COLUMNS)
    log = read_training_log(os.path.join(_out(tiny_config), 'training_log.csv'))
    assert log[0].floor_d == float(row['floor_mu_d'])


def test_eval_compares_several_checkpoints(runner, app_cli, tiny_config):
    out = _out(tiny_config)
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    _invoke(runner, app_cli, 'train', '--config', tiny_config)
    final = os.path.join(out, 'checkpoints', 'final.json')
    baseline = os.path.join(out, 'checkpoints', 'baseline.json')
    result = _invoke(runner, app_cli, 'eval', '--config', tiny_config,
                     '--checkpoint', f'learned={final}', '--checkpoint', baseline)
    assert result.exit_code == 0, result.output
    with open(os.path.join(out, 'report.csv'), encoding='utf-8', newline='') as f:
        assert [r['model'] for r in csv.DictReader(f)] == ['learned', 'linear']
    with open(os.path.join(out, 'convergence.csv'), encoding='utf-8', newline='') as f:
        assert {r['model'] for r in csv.DictReader(f)} == {'learned', 'linear'}


def test_eval_rejects_duplicate_labels(runner, app_cli, tiny_config):
    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    baseline = os.path.join(_out(tiny_config), 'checkpoints', 'baseline.json')
    result = runner.invoke(app_cli, ['eval', '--config', tiny_config, '--checkpoint', baseline,
                                     '--checkpoint', baseline])
    assert result.exit_code == 2
    assert 'duplicate checkpoint label' in result.output


def test_log_row_is_written_before_latest_checkpoint(runner, app_cli, tiny_config, monkeypatch):
    log_path = os.path.join(_out(tiny_config), 'training_log.csv')
    rows_at_save = []
    save = qirl.cli.save_checkpoint

    def recording(path, checkpoint, label=None):
        if label == 'latest':
            rows_at_save.append((checkpoint.step, len(read_training_log(log_path))))
        save(path, checkpoint, label=label)

    _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config)
    monkeypatch.setattr(qirl.cli, 'save_checkpoint', recording)
    result = _invoke(runner, app_cli, 'train', '--config', tiny_config, '--no-resume')
    assert result.exit_code == 0, result.output
    assert rows_at_save == [(1, 1)]


def test_gen_experts_uses_expert_budget(runner, app_cli, tiny_config, monkeypatch):
    with open(tiny_config, encoding='utf-8') as f:
        config = json.load(f)
    config['experts']['budget'] = 9
    with open(tiny_config, 'w', encoding='utf-8') as f:
        json.dump(config, f)
    budgets = []
    run_episodes = qirl.cli.run_episodes

    def recording(model, scenario, planner, seeds, workers, greedy=False):
        budgets.append((planner.budget, greedy))
        return run_episodes(model, scenario, planner, seeds, workers, greedy=greedy)

    monkeypatch.setattr(qirl.cli, 'run_episodes', recording)
    assert _invoke(runner, app_cli, 'gen-experts', '--config', tiny_config).exit_code == 0
    assert budgets == [(9, True)]
