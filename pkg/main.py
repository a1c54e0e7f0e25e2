import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from config import SOFTWARE_VERSION, configure_logging, load_config
from errors import ConfigError, NumericalError, PhaseSyncError
from ingest import epoch, read_edf, save_dataset, save_ground_truth, save_recording
from pipeline import (emit_report, load_input, load_report, run_arm_report, run_dual_pipeline)
from synth import SCENARIO_KINDS, scenario_spec, synth_eeg

logger = logging.getLogger(__name__)


def handle_errors(command):
    """Map toolkit errors onto exit codes (2 validation, 3 numerical)"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except PhaseSyncError as e:
            logger.error(str(e))
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
        except (np.linalg.LinAlgError, FloatingPointError) as e:
            logger.error(f"Numerical failure: {e}")
            click.echo(f"Error: numerical failure: {e}", err=True)
            sys.exit(NumericalError.exit_code)
    return wrapper


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs:
        if '=' not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split('=', 1)
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides


def _resolve_config(config_path, inputs, out, seed, no_ica, threshold, overrides):
    config = load_config(config_path)
    data = config.to_dict()
    unknown = sorted(set(overrides) - set(data))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    data.update(overrides)
    config = config.from_dict(data)
    return config.updated(
        inputs=list(inputs) or None,
        output_dir=out,
        ica_seed=seed,
        ica_enabled=False if no_ica else None,
        ica_threshold=threshold,
    )


def pipeline_options(command):
    """Options shared by run and compare"""
    options = [
        click.option('--input', 'inputs', multiple=True, type=click.Path(exists=True),
                     help='EDF file or recording container (repeatable)'),
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     help='JSON config file (a previous report.json also works)'),
        click.option('--out', type=click.Path(file_okay=False), help='Output directory'),
        click.option('--seed', type=int, help='ICA seed'),
        click.option('--no-ica', is_flag=True, help='Disable component removal in the clean arm'),
        click.option('--threshold', type=float, help='Frontal |r| threshold for flagging components'),
        click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                     help='Override any config key; VALUE is parsed as JSON when possible'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


@click.group()
@click.version_option(version=SOFTWARE_VERSION)
def cli():
    """Phase-synchronization analysis of EEG recordings"""
    configure_logging()


# Commands


@cli.command()
@click.argument('edf_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--events', 'events_csv', type=click.Path(exists=True, dir_okay=False),
              help='Sidecar CSV with sample_index,code columns')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--epochs', 'with_epochs', is_flag=True,
              help='Also write an epochs container cut with the config windows')
@handle_errors
def ingest(edf_path, events_csv, out, config_path, with_epochs):
    """Convert an EDF file into a recording container"""
    recording = read_edf(edf_path, events_csv=events_csv)
    out = Path(out)
    save_dataset(out / 'recording', recording)
    click.echo(f"Recording: {recording.n_channels} channels, {recording.n_samples} samples, "
               f"{len(recording.events)} events -> {out / 'recording'}")

    if with_epochs:
        config = load_config(config_path)
        codes = list(config.target_codes) + list(config.nontarget_codes)
        epochs, dropped = epoch(recording, codes, *config.epoch_window,
                                target_codes=config.target_codes)
        save_dataset(out / 'epochs', epochs)
        click.echo(f"Epochs: {epochs.n_trials} trials ({dropped} dropped) -> {out / 'epochs'}")


@cli.command()
@click.option('--scenario', type=click.Choice(SCENARIO_KINDS), default='intervention',
              show_default=True)
@click.option('--trials', type=int, default=200, show_default=True, help='Target trials')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--gain', type=float, default=20.0, show_default=True, help='Artifact gain')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@handle_errors
def synth(scenario, trials, seed, gain, out):
    """Generate a synthetic scenario with its ground truth and a matching config"""
    net, spec = scenario_spec(scenario, n_trials=trials, seed=seed, artifact_gain=gain)
    recording, truth = synth_eeg(net, spec, seed=seed)
    out = Path(out)
    save_recording(out / 'recording', recording)
    save_ground_truth(out / 'ground_truth', truth)

    config = {'inputs': [str(out / 'recording')], 'ica_n_components': spec.n_sources}
    (out / 'config.json').write_text(json.dumps(config, sort_keys=True, indent=2) + '\n',
                                     encoding='utf-8')
    click.echo(f"Scenario {scenario}: {spec.n_trials} target trials, seed {seed} -> {out}")


@cli.command()
@click.option('--arm', type=click.Choice(['clean', 'raw']), default='raw', show_default=True)
@pipeline_options
@handle_errors
def run(arm, inputs, config_path, out, seed, no_ica, threshold, overrides):
    """Run a single pipeline arm"""
    config = _resolve_config(config_path, inputs, out, seed, no_ica, threshold,
                             _parse_overrides(overrides))
    report = run_arm_report(config, arm)
    emit_report(report, config.output_dir, config.formats)
    result = report.arms[arm]
    click.echo(f"{arm}: global r={result.global_r.r:.3f}, trial r={result.trial_r.r:.3f} "
               f"(n={result.trial_r.n}) -> {config.output_dir}")


@cli.command()
@pipeline_options
@handle_errors
def compare(inputs, config_path, out, seed, no_ica, threshold, overrides):
    """Run clean and raw arms plus the mediation battery"""
    config = _resolve_config(config_path, inputs, out, seed, no_ica, threshold,
                             _parse_overrides(overrides))
    report = run_dual_pipeline(config)
    emit_report(report, config.output_dir, config.formats)
    click.echo(f"trial r clean={report.clean.trial_r.r:.3f} raw={report.raw.trial_r.r:.3f} "
               f"-> {config.output_dir}")


@cli.command()
@click.argument('report_path', type=click.Path(exists=True))
@click.option('--out', type=click.Path(file_okay=False),
              help='Output directory (defaults to the report directory)')
@click.option('--format', 'formats', multiple=True, type=click.Choice(['json', 'csv', 'svg']),
              help='Formats to write (default: csv and svg)')
@handle_errors
def report(report_path, out, formats):
    """Re-render table and figures from an existing report.json"""
    data = load_report(report_path)
    source = Path(report_path)
    out = Path(out) if out else (source if source.is_dir() else source.parent)
    written = emit_report(data, out, formats or ('csv', 'svg'))
    click.echo(f"Wrote {len(written)} files to {out}")


@cli.command()
@click.argument('path', type=click.Path(exists=True))
@handle_errors
def inspect(path):
    """Summarise an EDF file or recording container"""
    recording = load_input(path)
    click.echo(f"{recording.n_channels} channels at {recording.fs:g} Hz, "
               f"{recording.n_samples} samples, {len(recording.events)} events")
    click.echo(', '.join(recording.channel_labels))


if __name__ == '__main__':
    cli()
