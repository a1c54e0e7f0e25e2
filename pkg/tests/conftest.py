import numpy as np
import pytest

from config import PipelineConfig
from models import Recording
from synth import SCENARIO_CHANNELS, scenario_spec, synth_eeg

DIGITAL_MIN = -32768
DIGITAL_MAX = 32767
ANNOTATION_SAMPLES = 60


def _field(value, width):
    text = str(value)
    assert len(text) <= width, f"{text!r} does not fit in {width} bytes"
    return text.ljust(width).encode('latin-1')


def _tal_record(onset, annotations):
    """One record's worth of EDF+ annotation bytes"""
    text = f"+{onset:g}\x14\x14\x00"
    for when, code in annotations:
        text += f"+{when:g}\x14{code}\x14\x00"
    raw = text.encode('latin-1')
    size = 2 * ANNOTATION_SAMPLES
    assert len(raw) <= size, "too many annotations for one record"
    return raw.ljust(size, b'\x00')


def edf_bytes(labels, fs, data, record_duration=1.0, unit='uV', annotations=(),
              n_records_field=None, header_bytes_field=None, physical_range=None):
    """Minimal EDF(+) writer used as an independent oracle for the parser.

    data is channels x samples in `unit`; annotations are (onset seconds, code)
    pairs written to an 'EDF Annotations' channel.
    """
    data = np.asarray(data, dtype=float)
    spr = int(round(fs * record_duration))
    n_samples = data.shape[1]
    assert n_samples % spr == 0, "sample count must fill whole records"
    n_records = n_samples // spr

    if physical_range is None:
        pmin = np.floor(data.min(axis=1)) - 1.0
        pmax = np.ceil(data.max(axis=1)) + 1.0
    else:
        pmin = np.full(len(labels), float(physical_range[0]))
        pmax = np.full(len(labels), float(physical_range[1]))
    scale = (DIGITAL_MAX - DIGITAL_MIN) / (pmax - pmin)
    digital = np.round((data - pmin[:, None]) * scale[:, None] + DIGITAL_MIN)
    digital = np.clip(digital, DIGITAL_MIN, DIGITAL_MAX).astype('<i2')

    channels = [dict(label=label, unit=unit, pmin=f"{lo:g}", pmax=f"{hi:g}", spr=spr)
                for label, lo, hi in zip(labels, pmin, pmax)]
    with_annotations = bool(annotations)
    if with_annotations:
        channels.append(dict(label='EDF Annotations', unit='', pmin='-1', pmax='1',
                             spr=ANNOTATION_SAMPLES))
    ns = len(channels)

    header = b''.join([
        _field('0', 8), _field('X X X test', 80), _field('Startdate 01-JAN-2020 X X X', 80),
        _field('01.01.20', 8), _field('10.00.00', 8),
        _field(header_bytes_field if header_bytes_field is not None else 256 + 256 * ns, 8),
        _field('EDF+C' if with_annotations else '', 44),
        _field(n_records_field if n_records_field is not None else n_records, 8),
        _field(f"{record_duration:g}", 8), _field(ns, 4),
    ])
    header += b''.join(_field(ch['label'], 16) for ch in channels)
    header += b''.join(_field('AgAgCl', 80) for _ in channels)
    header += b''.join(_field(ch['unit'], 8) for ch in channels)
    header += b''.join(_field(ch['pmin'], 8) for ch in channels)
    header += b''.join(_field(ch['pmax'], 8) for ch in channels)
    header += b''.join(_field(DIGITAL_MIN, 8) for _ in channels)
    header += b''.join(_field(DIGITAL_MAX, 8) for _ in channels)
    header += b''.join(_field('HP:0.1Hz', 80) for _ in channels)
    header += b''.join(_field(ch['spr'], 8) for ch in channels)
    header += b''.join(_field('', 32) for _ in channels)

    payload = b''
    for r in range(n_records):
        for ch in range(len(labels)):
            payload += digital[ch, r * spr:(r + 1) * spr].tobytes()
        if with_annotations:
            onset = r * record_duration
            inside = [(t, c) for t, c in annotations if onset <= t < onset + record_duration]
            payload += _tal_record(onset, inside)
    return header + payload


def quantisation_step(data):
    """Largest physical step of the writer's digital grid for this data"""
    data = np.asarray(data, dtype=float)
    span = (np.ceil(data.max(axis=1)) + 1.0) - (np.floor(data.min(axis=1)) - 1.0)
    return float(np.max(span) / (DIGITAL_MAX - DIGITAL_MIN))


@pytest.fixture
def write_edf(tmp_path):
    def _write(name='test.edf', **kwargs):
        path = tmp_path / name
        path.write_bytes(edf_bytes(**kwargs))
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def default_config():
    return PipelineConfig()


@pytest.fixture
def scenario_config(tmp_path):
    return PipelineConfig(ica_n_components=6, output_dir=str(tmp_path / 'results'))


def make_scenario(kind, n_trials=40, seed=0, **kwargs):
    net, spec = scenario_spec(kind, n_trials=n_trials, seed=seed, **kwargs)
    return synth_eeg(net, spec, seed=seed)


@pytest.fixture(scope='session')
def intervention_small():
    recording, _ = make_scenario('intervention', n_trials=40, seed=3)
    return recording


@pytest.fixture
def flat_recording():
    fs = 256.0
    n_samples = int(30 * fs)
    events = [(int(s), '1') for s in np.arange(2 * fs, n_samples - 2 * fs, 1.3 * fs)]
    return Recording(channel_labels=SCENARIO_CHANNELS, fs=fs,
                     data=np.zeros((len(SCENARIO_CHANNELS), n_samples)), events=tuple(events))
