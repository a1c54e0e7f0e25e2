import json

import numpy as np
import pytest
from click.testing import CliRunner

import main
from conftest import edf_bytes
from ingest import load_epochs, load_ground_truth, load_recording, save_recording
from main import cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def synth_dir(runner, tmp_path):
    out = tmp_path / 'scenario'
    result = runner.invoke(cli, ['synth', '--scenario', 'intervention', '--trials', '40',
                                 '--seed', '3', '--out', str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_synth_writes_recording_truth_and_config(synth_dir):
    recording = load_recording(synth_dir / 'recording')
    truth = load_ground_truth(synth_dir / 'ground_truth')
    config = json.loads((synth_dir / 'config.json').read_text())

    assert recording.n_channels == 16
    assert len(truth.trial_amplitudes) == 40
    assert config['ica_n_components'] == 8
    assert config['inputs'] == [str(synth_dir / 'recording')]


def test_compare_writes_full_report(runner, synth_dir, tmp_path):
    out = tmp_path / 'results'
    result = runner.invoke(cli, ['compare', '--config', str(synth_dir / 'config.json'),
                                 '--out', str(out), '--seed', '0', '--threshold', '0.3'])
    assert result.exit_code == 0, result.output
    assert (out / 'report.json').exists()
    assert (out / 'table1.csv').exists()
    assert len(list((out / 'figures').glob('*.svg'))) == 8

    report = json.loads((out / 'report.json').read_text())
    assert set(report['arms']) == {'clean', 'raw'}
    assert report['config']['output_dir'] == str(out)
    assert report['battery'] is not None


def test_compare_is_reproducible_from_the_echoed_config(runner, synth_dir, tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    args = ['compare', '--input', str(synth_dir / 'recording'), '--set', 'ica_n_components=6']
    assert runner.invoke(cli, args + ['--out', str(first)]).exit_code == 0
    result = runner.invoke(cli, ['compare', '--config', str(first / 'report.json'),
                                 '--out', str(second)])
    assert result.exit_code == 0, result.output

    a = json.loads((first / 'report.json').read_text())
    b = json.loads((second / 'report.json').read_text())
    for report in (a, b):
        report.pop('generated_at')
        report['config'].pop('output_dir')
    assert a == b


def test_run_single_arm(runner, synth_dir, tmp_path):
    out = tmp_path / 'raw'
    result = runner.invoke(cli, ['run', '--arm', 'raw', '--config', str(synth_dir / 'config.json'),
                                 '--out', str(out), '--set', 'formats=["json"]'])
    assert result.exit_code == 0, result.output
    report = json.loads((out / 'report.json').read_text())
    assert set(report['arms']) == {'raw'}
    assert not (out / 'table1.csv').exists()


def test_no_ica_makes_arms_identical(runner, synth_dir, tmp_path):
    out = tmp_path / 'noica'
    result = runner.invoke(cli, ['compare', '--config', str(synth_dir / 'config.json'),
                                 '--out', str(out), '--no-ica'])
    assert result.exit_code == 0, result.output
    arms = json.loads((out / 'report.json').read_text())['arms']
    assert arms['clean']['trial_r'] == arms['raw']['trial_r']


def test_report_rerenders_figures(runner, synth_dir, tmp_path):
    out = tmp_path / 'results'
    runner.invoke(cli, ['compare', '--config', str(synth_dir / 'config.json'), '--out', str(out)])
    rendered = tmp_path / 'rendered'
    result = runner.invoke(cli, ['report', str(out / 'report.json'), '--out', str(rendered)])
    assert result.exit_code == 0, result.output
    assert (rendered / 'table1.csv').read_bytes() == (out / 'table1.csv').read_bytes()
    assert len(list((rendered / 'figures').glob('*.svg'))) == 8


def test_ingest_converts_edf(runner, tmp_path):
    fs = 128.0
    data = np.random.default_rng(0).normal(size=(3, 1280))
    edf = tmp_path / 'rec.edf'
    edf.write_bytes(edf_bytes(labels=['Fp1', 'Cz', 'Pz'], fs=fs, data=data,
                              annotations=[(2.0, '1'), (4.0, '2'), (6.0, '1')]))
    out = tmp_path / 'converted'
    result = runner.invoke(cli, ['ingest', str(edf), '--out', str(out), '--epochs'])
    assert result.exit_code == 0, result.output

    assert load_recording(out / 'recording').events == ((256, '1'), (512, '2'), (768, '1'))
    epochs = load_epochs(out / 'epochs')
    assert epochs.labels == ('target', 'nontarget', 'target')


def test_inspect(runner, synth_dir):
    result = runner.invoke(cli, ['inspect', str(synth_dir / 'recording')])
    assert result.exit_code == 0
    assert '16 channels' in result.output


def test_invalid_edf_exits_with_validation_code(runner, tmp_path):
    bad = tmp_path / 'bad.edf'
    bad.write_bytes(b'not an edf file')
    result = runner.invoke(cli, ['compare', '--input', str(bad), '--out', str(tmp_path / 'o')])
    assert result.exit_code == 2


def test_unknown_override_exits_with_validation_code(runner, synth_dir, tmp_path):
    result = runner.invoke(cli, ['compare', '--config', str(synth_dir / 'config.json'),
                                 '--set', 'bogus=1', '--out', str(tmp_path / 'o')])
    assert result.exit_code == 2


def test_missing_input_exits_with_validation_code(runner, tmp_path):
    result = runner.invoke(cli, ['compare', '--out', str(tmp_path / 'o')])
    assert result.exit_code == 2


def test_numerical_failure_exits_with_code_3(runner, flat_recording, tmp_path):
    save_recording(tmp_path / 'flat', flat_recording)
    result = runner.invoke(cli, ['compare', '--input', str(tmp_path / 'flat'),
                                 '--out', str(tmp_path / 'o')])
    assert result.exit_code == 3


def test_numpy_failures_outside_a_stage_exit_with_code_3(runner, synth_dir, tmp_path,
                                                         monkeypatch):
    def failing_pipeline(config):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr(main, 'run_dual_pipeline', failing_pipeline)
    result = runner.invoke(cli, ['compare', '--config', str(synth_dir / 'config.json'),
                                 '--out', str(tmp_path / 'o')])
    assert result.exit_code == 3
    assert 'numerical failure' in result.output
